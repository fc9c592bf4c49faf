use std::sync::Mutex;

use super::{ChatRequest, LlmClient, LlmError};

/// Replies with canned responses in order. Running past the end is an
/// error; the client never repeats itself.
#[derive(Debug)]
pub struct ScriptedClient {
    script: Vec<String>,
    state: Mutex<State>,
}

#[derive(Debug, Default)]
struct State {
    cursor: usize,
    requests: Vec<ChatRequest>,
}

impl ScriptedClient {
    pub fn new<I, S>(script: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            script: script.into_iter().map(Into::into).collect(),
            state: Mutex::new(State::default()),
        }
    }

    /// Load a script file: a JSON array whose string elements are used
    /// verbatim and whose other elements are re-serialized compactly.
    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        let items: Vec<serde_json::Value> = serde_json::from_str(text)
            .map_err(|e| LlmError::Config(format!("mock script is not a JSON array: {e}")))?;
        Ok(Self::new(items.into_iter().map(|v| match v {
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        })))
    }

    pub fn cursor(&self) -> usize {
        self.state.lock().unwrap().cursor
    }

    pub fn remaining(&self) -> usize {
        self.script.len() - self.cursor()
    }

    /// The responses handed out so far.
    pub fn consumed(&self) -> Vec<String> {
        self.script[..self.cursor()].to_vec()
    }

    /// Every request received, including the one that exhausted the script.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.state.lock().unwrap().requests.clone()
    }
}

impl LlmClient for ScriptedClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let mut state = self.state.lock().unwrap();
        state.requests.push(request.clone());
        let reply = self
            .script
            .get(state.cursor)
            .cloned()
            .ok_or(LlmError::ScriptExhausted(self.script.len()))?;
        state.cursor += 1;
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Message, ModelSettings, Purpose};

    fn req() -> ChatRequest {
        ModelSettings::default().request(Purpose::Generate, vec![Message::user("hi")])
    }

    #[test]
    fn hands_out_script_then_errors() {
        let client = ScriptedClient::new(["{...}"]);
        assert_eq!(client.complete(&req()).unwrap(), "{...}");
        assert!(matches!(
            client.complete(&req()),
            Err(LlmError::ScriptExhausted(1))
        ));
        assert_eq!(client.consumed(), vec!["{...}".to_string()]);
        assert_eq!(client.requests().len(), 2);
    }

    #[test]
    fn json_script_mixes_strings_and_objects() {
        let client = ScriptedClient::from_json(r#"["plain", {"confidence": 5}]"#).unwrap();
        assert_eq!(client.complete(&req()).unwrap(), "plain");
        assert_eq!(client.complete(&req()).unwrap(), r#"{"confidence":5}"#);
        assert!(ScriptedClient::from_json("{}").is_err());
    }
}
