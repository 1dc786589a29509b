//! Chat-completion client for the planner.

use std::path::Path;
use std::time::Duration;

use taskgrasp_core::planner::{chat_response_text, LlmClient, LlmRequestError, ScriptedClient};
use taskgrasp_core::{LLMClientConfig, PlannerError};

use crate::error::CliError;

pub const ENV_ENDPOINT: &str = "TASKGRASP_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "TASKGRASP_LLM_API_KEY";

pub struct HttpClient {
    config: LLMClientConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn new(config: LLMClientConfig, api_key: Option<String>) -> Result<Self, PlannerError> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
            .build()
            .new_agent();
        Ok(HttpClient { config, api_key, agent })
    }

    /// Endpoint and key come from the environment; everything else from `config`.
    pub fn from_env(mut config: LLMClientConfig) -> Result<Self, PlannerError> {
        config.endpoint = std::env::var(ENV_ENDPOINT)
            .map_err(|_| PlannerError::InvalidConfig(format!("{ENV_ENDPOINT} is not set")))?;
        let key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        Self::new(config, key)
    }

    fn request(&self, prompt: &str) -> Result<String, LlmRequestError> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send_json(self.config.request_body(prompt)).map_err(|e| LlmRequestError(e.to_string()))?;
        let body: serde_json::Value = resp.body_mut().read_json().map_err(|e| LlmRequestError(e.to_string()))?;
        chat_response_text(&body).ok_or_else(|| LlmRequestError("reply lacks choices[0].message.content".into()))
    }
}

impl LlmClient for HttpClient {
    fn complete(&self, prompt: &str, sample: usize) -> Result<String, LlmRequestError> {
        let mut attempt = 0;
        loop {
            match self.request(prompt) {
                Ok(t) => return Ok(t),
                Err(e) if attempt < self.config.max_retries => {
                    log::debug!("sample {sample} attempt {attempt}: {e}");
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Scripted responses from `responses` when given, otherwise HTTP.
pub fn client(responses: Option<&Path>, config: LLMClientConfig) -> Result<Box<dyn LlmClient>, CliError> {
    match responses {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let c = ScriptedClient::from_delimited(&text);
            if c.is_empty() {
                return Err(CliError::Config(format!("{}: no responses", path.display())));
            }
            Ok(Box::new(c))
        }
        None => Ok(Box::new(HttpClient::from_env(config)?)),
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    use super::*;

    /// Serves `replies` in order, one connection each, returning the raw requests.
    fn serve(replies: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut r = BufReader::new(stream);
                let mut head = String::new();
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    r.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut payload = vec![0; len];
                r.read_exact(&mut payload).unwrap();
                seen.push(head + &String::from_utf8(payload).unwrap());
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                r.get_mut().write_all(reply.as_bytes()).unwrap();
            }
            seen
        });
        (url, handle)
    }

    fn chat(content: &str) -> String {
        serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    #[test]
    fn posts_a_chat_request_and_reads_the_content() {
        let (url, h) = serve(vec![(200, chat("Action: grasp\nObject: mug\nPart: handle"))]);
        let cfg = LLMClientConfig { endpoint: url, model: "m1".into(), ..Default::default() };
        let c = HttpClient::new(cfg, Some("sk-test".into())).unwrap();
        assert_eq!(c.complete("hello", 0).unwrap(), "Action: grasp\nObject: mug\nPart: handle");
        let req = h.join().unwrap().remove(0);
        assert!(req.starts_with("POST /v1/chat/completions"));
        assert!(req.contains("Bearer sk-test"));
        let body: serde_json::Value = serde_json::from_str(&req[req.find("\r\n\r\n").unwrap() + 4..]).unwrap();
        assert_eq!(body["model"], "m1");
        assert_eq!(body["messages"][0]["content"], "hello");
    }

    #[test]
    fn retries_failed_requests() {
        let (url, h) = serve(vec![(500, "{}".into()), (200, chat("ok"))]);
        let cfg = LLMClientConfig { endpoint: url, max_retries: 1, ..Default::default() };
        let c = HttpClient::new(cfg, None).unwrap();
        assert_eq!(c.complete("p", 0).unwrap(), "ok");
        assert!(!h.join().unwrap()[0].contains("Authorization"));
    }

    #[test]
    fn malformed_reply_is_an_error() {
        let (url, h) = serve(vec![(200, "{\"choices\": []}".into())]);
        let cfg = LLMClientConfig { endpoint: url, max_retries: 0, ..Default::default() };
        assert!(HttpClient::new(cfg, None).unwrap().complete("p", 0).is_err());
        h.join().unwrap();
    }
}
