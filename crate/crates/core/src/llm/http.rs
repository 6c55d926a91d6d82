//! OpenAI-compatible chat completions over HTTP.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{LlmError, Provider, ProviderRequest, ProviderResponse};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpSettings {
    /// Base URL up to and including the API version, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub api_key: String,
    pub timeout: Duration,
}

pub struct HttpProvider {
    settings: HttpSettings,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpProvider {
    pub fn new(settings: HttpSettings) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(settings.timeout).build();
        HttpProvider { settings, agent }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.settings.base_url.trim_end_matches('/'))
    }
}

impl Provider for HttpProvider {
    fn complete(&self, request: &ProviderRequest<'_>) -> Result<ProviderResponse, LlmError> {
        // Sampling parameters stay at provider defaults.
        let body = json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        let response = self
            .agent
            .post(&self.endpoint())
            .set("Authorization", &format!("Bearer {}", self.settings.api_key))
            .send_json(body)
            .map_err(|e| match e {
                ureq::Error::Status(code, resp) => {
                    let text = resp.into_string().unwrap_or_default();
                    LlmError::Provider(format!("HTTP {code}: {}", text.trim()))
                }
                other => LlmError::Provider(other.to_string()),
            })?;
        let parsed: ChatResponse = response
            .into_json()
            .map_err(|e| LlmError::Provider(format!("undecodable response: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Provider("response has no message content".into()))?;
        let usage = parsed.usage.unwrap_or(Usage {
            prompt_tokens: 0,
            completion_tokens: 0,
        });
        Ok(ProviderResponse {
            text,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Role, TemplateId};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves one canned response and hands back the request body.
    fn serve_once(status: &str, body: &str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let reply = format!(
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            let mut head = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                head.push_str(&line);
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            let mut stream = stream;
            stream.write_all(reply.as_bytes()).unwrap();
            format!("{head}\n{}", String::from_utf8(buf).unwrap())
        });
        (url, handle)
    }

    fn provider(url: String) -> HttpProvider {
        HttpProvider::new(HttpSettings {
            base_url: url,
            api_key: "sk-test".into(),
            timeout: Duration::from_secs(5),
        })
    }

    fn request() -> ProviderRequest<'static> {
        ProviderRequest {
            role: Role::Reasoning,
            model: "reasoner",
            template: TemplateId::Mapping,
            prompt: "hello",
        }
    }

    #[test]
    fn parses_chat_completion() {
        let (url, handle) = serve_once(
            "200 OK",
            r#"{"choices":[{"message":{"role":"assistant","content":"ok {\"a\":1}"}}],"usage":{"prompt_tokens":7,"completion_tokens":3}}"#,
        );
        let resp = provider(url).complete(&request()).unwrap();
        assert_eq!(resp.text, "ok {\"a\":1}");
        assert_eq!((resp.prompt_tokens, resp.completion_tokens), (7, 3));
        let seen = handle.join().unwrap();
        assert!(seen.contains("POST /v1/chat/completions"));
        assert!(seen.to_ascii_lowercase().contains("authorization: bearer sk-test"));
        assert!(seen.contains("\"model\":\"reasoner\""));
    }

    #[test]
    fn status_error_is_provider_error() {
        let (url, handle) = serve_once("500 Internal Server Error", r#"{"error":"boom"}"#);
        let err = provider(url).complete(&request()).unwrap_err();
        assert!(matches!(err, LlmError::Provider(ref m) if m.contains("500")), "{err:?}");
        handle.join().unwrap();
    }
}
