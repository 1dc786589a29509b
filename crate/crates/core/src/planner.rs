//! Few-shot LLM planning: task text to (action, object, part[, place]).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_VOTES: usize = 7;
pub const DEFAULT_TEMPERATURE: f64 = 0.7;

/// The few-shot prompt. `{OBJECT_LIST}` and `{TASK}` are the only placeholders.
pub const PROMPT_TEMPLATE: &str = "\
Answer the question as if you are a robot with a parallel jaw gripper that has
access to only the objects in the object list. Follow the exact format.
First line should describe what basic action is needed to do the task from
the following set of actions: press, grasp, twist, pick & place.
The second line should only be an object from the object list followed by 1 object
part that the robot would touch to do this task. VERY IMPORTANT: If the basic
action is pick & place, only then have a third line with 'Place: '
to specify the object to place on.
Object list: ['pot', 'knife', 'spoon', 'black pan']
Q: How can I safely pick up a pan?
Basic Action: grasp
Sequence: 1. black pan 2. handle

Object list: ['mechanical keyboard', 'knife', 'TV', 'camera']
Q: How can I safely hit the spacebar on a keyboard?
Basic action: press
Sequence: 1. mechanical keyboard 2. spacebar

Object list: ['green mug', 'blue spoon', 'fork', 'knife']
Q: How can I cut a block of cheese?
Basic action: grasp
Sequence: 1. knife 2. handle

Object list: ['salt shaker', 'knife', 'fork', 'white pan']
Q: How can I safely lift a salt shaker?
Basic Action: grasp
Sequence: 1. salt shaker 2. base

Object list: ['red cup', 'blue cup', 'mug', 'bowl']
Q: How do I stack the red cup on the blue cup?
Basic action: pick & place
Sequence: 1. red cup 2. rim
Place: blue cup

Object list: ['door knob', 'black mug', 'green dish brush', 'shiny knife']
Q: How do I open a door knob?
Basic action: twist
Sequence: 1. door knob 2. rim

Object list: ['dryer', 'washing machine', 'sunglasses']
Q: How do I turn on the washing machine?
Basic action: twist
Sequence: 1. washing machine 2. dial

Object list: ['paper towel roll', 'mug', 'teacup', 'headphones', 'pen']
Q: How do I grab a paper towel?
Basic action: grasp
Sequence: 1. paper towel roll 2. paper towel

Object list: ['magnifying glass', 'blue spoon', 'fork', 'knife']
Q: How do I pick up a magnifying glass?
Basic action: grasp
Sequence: 1. magnifying glass 2. handle

Object list: ['teddy bear', 'toy block', 'mouse', 'saucepan', 'hammer']
Q: How do I grab a teddy bear?
Basic action: grasp
Sequence: 1. teddy bear 2. head

Object list: ['green mug', 'blue spoon', 'fork', 'knife']
Q: How do I put the mug in the cabinet?
Basic action: pick & place
Sequence: 1. green mug 2. handle
Place: cabinet

Object list: {OBJECT_LIST}
Q: How can I safely {TASK}?
Basic action:";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("object list is empty")]
    EmptyObjectList,
    #[error("unparseable response: {0}")]
    UnparseableResponse(String),
    #[error("unknown action {0:?}")]
    UnknownAction(String),
    #[error("none of the {0} responses could be parsed")]
    NoParseableResponses(usize),
    #[error("LLM unavailable: {0}")]
    LLMUnavailable(String),
    #[error("vote count must be odd and at least 1, got {0}")]
    InvalidVoteCount(usize),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("invalid client config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    #[serde(rename = "press")]
    Press,
    #[serde(rename = "grasp")]
    Grasp,
    #[serde(rename = "twist")]
    Twist,
    #[serde(rename = "pick&place")]
    PickAndPlace,
    #[serde(rename = "pour")]
    Pour,
}

impl Action {
    pub const ALL: [Action; 5] = [Action::Press, Action::Grasp, Action::Twist, Action::PickAndPlace, Action::Pour];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Press => "press",
            Action::Grasp => "grasp",
            Action::Twist => "twist",
            Action::PickAndPlace => "pick&place",
            Action::Pour => "pour",
        }
    }

    /// Spelling used inside prompt responses.
    fn response_label(self) -> &'static str {
        match self {
            Action::PickAndPlace => "pick & place",
            a => a.as_str(),
        }
    }

    pub fn parse(text: &str) -> Result<Action, PlannerError> {
        let t = text.trim().trim_end_matches('.').trim().to_lowercase();
        let squashed: String = t.split_whitespace().collect::<Vec<_>>().join(" ");
        match squashed.as_str() {
            "press" => Ok(Action::Press),
            "grasp" => Ok(Action::Grasp),
            "twist" => Ok(Action::Twist),
            "pour" => Ok(Action::Pour),
            "pick & place" | "pick&place" | "pick and place" | "pick-and-place" => Ok(Action::PickAndPlace),
            _ => Err(PlannerError::UnknownAction(text.trim().to_string())),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LLMPlan {
    pub action: Action,
    pub object: String,
    pub part: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub place: Option<String>,
}

impl LLMPlan {
    pub fn new(action: Action, object: &str, part: &str, place: Option<&str>) -> Result<Self, PlannerError> {
        let plan = LLMPlan {
            action,
            object: object.trim().to_string(),
            part: part.trim().to_string(),
            place: place.map(|p| p.trim().to_string()),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.object.is_empty() || self.part.is_empty() {
            return Err(PlannerError::InvalidPlan("object and part must be non-empty".into()));
        }
        match (&self.place, self.action) {
            (Some(p), Action::PickAndPlace) if !p.is_empty() => Ok(()),
            (None, a) if a != Action::PickAndPlace => Ok(()),
            _ => Err(PlannerError::InvalidPlan("place must be present exactly for pick&place".into())),
        }
    }

    pub fn pair(&self) -> (&str, &str) {
        (&self.object, &self.part)
    }
}

/// Python list repr, matching the exemplars' `['a', 'b']` spelling.
fn python_list(items: &[String]) -> String {
    let quoted: Vec<String> = items
        .iter()
        .map(|s| {
            if s.contains('\'') && !s.contains('"') {
                format!("\"{}\"", s.replace('\\', "\\\\"))
            } else {
                format!("'{}'", s.replace('\\', "\\\\").replace('\'', "\\'"))
            }
        })
        .collect();
    format!("[{}]", quoted.join(", "))
}

pub fn build_prompt(object_list: &[String], task: &str) -> Result<String, PlannerError> {
    if object_list.is_empty() {
        return Err(PlannerError::EmptyObjectList);
    }
    let (head, tail) = PROMPT_TEMPLATE.split_once("{OBJECT_LIST}").expect("template placeholder");
    let (mid, end) = tail.split_once("{TASK}").expect("template placeholder");
    Ok(format!("{head}{}{mid}{}{end}", python_list(object_list), task.trim()))
}

fn strip_prefix_ci<'a>(line: &'a str, prefix: &str) -> Option<&'a str> {
    let head = line.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &line[prefix.len()..])
}

/// `1. X 2. Y`, splitting on the last ` 2.` marker.
fn parse_sequence(rest: &str) -> Option<(String, String)> {
    let rest = rest.trim().strip_prefix("1.")?;
    let cut = rest.rmatch_indices("2.").find(|&(i, _)| i > 0 && rest[..i].ends_with(char::is_whitespace))?.0;
    let object = rest[..cut].trim();
    let part = rest[cut + 2..].trim();
    (!object.is_empty() && !part.is_empty()).then(|| (object.to_string(), part.to_string()))
}

/// Reads the first answer block of `text`. A leading bare action line is
/// accepted as the continuation of a prompt that ends in `Basic action:`.
pub fn parse_response(text: &str) -> Result<LLMPlan, PlannerError> {
    let unparseable = || PlannerError::UnparseableResponse(text.chars().take(80).collect());
    let mut action: Option<&str> = None;
    let mut sequence: Option<(String, String)> = None;
    let mut place: Option<&str> = None;
    let mut first_content = true;
    for raw in text.lines() {
        let line = raw.trim().trim_end_matches('\\').trim().trim_matches('"').trim();
        if line.is_empty() {
            continue;
        }
        let was_first = std::mem::replace(&mut first_content, false);
        if sequence.is_some()
            && (strip_prefix_ci(line, "object list:").is_some() || strip_prefix_ci(line, "q:").is_some())
        {
            break;
        }
        if let Some(rest) = strip_prefix_ci(line, "basic action:") {
            if action.is_none() {
                action = Some(rest.trim());
            } else if sequence.is_some() {
                break;
            }
        } else if let Some(rest) = strip_prefix_ci(line, "sequence:") {
            if sequence.is_none() {
                sequence = Some(parse_sequence(rest).ok_or_else(unparseable)?);
            }
        } else if let Some(rest) = strip_prefix_ci(line, "place:") {
            if sequence.is_some() && place.is_none() {
                place = Some(rest.trim());
            }
        } else if was_first && action.is_none() && Action::parse(line).is_ok() {
            action = Some(line);
        }
    }
    let (action, (object, part)) = match (action, sequence) {
        (Some(a), Some(s)) => (Action::parse(a)?, s),
        _ => return Err(unparseable()),
    };
    let place = match action {
        Action::PickAndPlace => Some(place.filter(|p| !p.is_empty()).ok_or_else(unparseable)?),
        _ => None,
    };
    LLMPlan::new(action, &object, &part, place)
}

/// The response layout `parse_response` reads.
pub fn format_response(plan: &LLMPlan) -> String {
    let mut s =
        format!("Basic action: {}\nSequence: 1. {} 2. {}", plan.action.response_label(), plan.object, plan.part);
    if let Some(p) = &plan.place {
        s.push_str("\nPlace: ");
        s.push_str(p);
    }
    s
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct LlmRequestError(pub String);

/// One completion per call. `sample` numbers the request within a vote.
pub trait LlmClient: Sync {
    fn complete(&self, prompt: &str, sample: usize) -> Result<String, LlmRequestError>;
}

/// Replays canned responses, cycling by sample index.
#[derive(Debug, Clone)]
pub struct ScriptedClient {
    responses: Vec<Result<String, String>>,
}

impl ScriptedClient {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        ScriptedClient { responses: responses.into_iter().map(|s| Ok(s.into())).collect() }
    }

    pub fn with_failures(responses: Vec<Result<String, String>>) -> Self {
        ScriptedClient { responses }
    }

    /// Responses separated by lines of `---`.
    pub fn from_delimited(text: &str) -> Self {
        let mut chunks = vec![String::new()];
        for line in text.lines() {
            if line.trim() == "---" {
                chunks.push(String::new());
            } else {
                let c = chunks.last_mut().unwrap();
                c.push_str(line);
                c.push('\n');
            }
        }
        ScriptedClient::new(chunks.into_iter().filter(|c| !c.trim().is_empty()))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl LlmClient for ScriptedClient {
    fn complete(&self, _prompt: &str, sample: usize) -> Result<String, LlmRequestError> {
        if self.responses.is_empty() {
            return Err(LlmRequestError("no scripted responses".into()));
        }
        self.responses[sample % self.responses.len()].clone().map_err(LlmRequestError)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LLMClientConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_s: f64,
    pub max_retries: u32,
}

impl Default for LLMClientConfig {
    fn default() -> Self {
        LLMClientConfig {
            endpoint: String::new(),
            model: "gpt-4".into(),
            temperature: DEFAULT_TEMPERATURE,
            timeout_s: 30.0,
            max_retries: 2,
        }
    }
}

impl LLMClientConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(PlannerError::InvalidConfig(format!("timeout must be positive, got {}", self.timeout_s)));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(PlannerError::InvalidConfig(format!(
                "temperature must be non-negative, got {}",
                self.temperature
            )));
        }
        if self.endpoint.trim().is_empty() {
            return Err(PlannerError::InvalidConfig("endpoint is empty".into()));
        }
        Ok(())
    }

    /// Chat-completion request body for one prompt.
    pub fn request_body(&self, prompt: &str) -> serde_json::Value {
        serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        })
    }
}

/// `choices[0].message.content` of a chat-completion reply.
pub fn chat_response_text(body: &serde_json::Value) -> Option<String> {
    body.get("choices")?.get(0)?.get("message")?.get("content")?.as_str().map(str::to_string)
}

/// Plurality over (object, part); ties go to the pair seen first. The action
/// is the mode among responses carrying the winning pair, again earliest first.
pub fn vote_responses<S: AsRef<str>>(responses: &[S]) -> Result<LLMPlan, PlannerError> {
    let plans: Vec<LLMPlan> = responses.iter().filter_map(|r| parse_response(r.as_ref()).ok()).collect();
    vote_plans(&plans).ok_or(PlannerError::NoParseableResponses(responses.len()))
}

fn mode_first<T: PartialEq + Clone>(items: &[T]) -> Option<T> {
    let mut best: Option<(usize, &T)> = None;
    for (i, it) in items.iter().enumerate() {
        if items[..i].contains(it) {
            continue;
        }
        let c = items.iter().filter(|x| *x == it).count();
        if best.is_none_or(|(bc, _)| c > bc) {
            best = Some((c, it));
        }
    }
    best.map(|(_, t)| t.clone())
}

fn vote_plans(plans: &[LLMPlan]) -> Option<LLMPlan> {
    let pairs: Vec<(&str, &str)> = plans.iter().map(LLMPlan::pair).collect();
    let winner = mode_first(&pairs)?;
    let carrying: Vec<&LLMPlan> = plans.iter().filter(|p| p.pair() == winner).collect();
    let actions: Vec<Action> = carrying.iter().map(|p| p.action).collect();
    let action = mode_first(&actions)?;
    let places: Vec<Option<String>> = carrying.iter().filter(|p| p.action == action).map(|p| p.place.clone()).collect();
    let place = mode_first(&places)?;
    Some(LLMPlan { action, object: winner.0.to_string(), part: winner.1.to_string(), place })
}

/// Samples `k` responses concurrently and votes. Failed requests are dropped;
/// only when all of them fail is the LLM reported unavailable.
pub fn majority_vote(
    task: &str,
    object_list: &[String],
    client: &dyn LlmClient,
    k: usize,
) -> Result<LLMPlan, PlannerError> {
    if k == 0 || k % 2 == 0 {
        return Err(PlannerError::InvalidVoteCount(k));
    }
    let prompt = build_prompt(object_list, task)?;
    let results: Vec<Result<String, LlmRequestError>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..k)
            .map(|i| {
                s.spawn({
                    let prompt = &prompt;
                    move || client.complete(prompt, i)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(LlmRequestError("request thread panicked".into()))))
            .collect()
    });
    let mut responses = Vec::with_capacity(k);
    let mut last_err = None;
    for r in results {
        match r {
            Ok(t) => responses.push(t),
            Err(e) => {
                log::warn!("LLM request failed: {e}");
                last_err = Some(e);
            }
        }
    }
    if responses.is_empty() {
        return Err(PlannerError::LLMUnavailable(last_err.map(|e| e.0).unwrap_or_default()));
    }
    vote_responses(&responses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use sha2::{Digest, Sha256};
    use std::collections::HashMap;

    fn objs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn prompt_substitutes_list_and_task() {
        let p = build_prompt(&objs(&["pot", "knife"]), "cut the bread").unwrap();
        assert!(p.contains("Object list: ['pot', 'knife']\nQ: How can I safely cut the bread?\nBasic action:"));
        assert!(p.starts_with("Answer the question as if you are a robot with a parallel jaw gripper"));
    }

    #[test]
    fn prompt_differs_from_template_only_at_placeholders() {
        let p = build_prompt(&objs(&["a"]), "T").unwrap();
        let (head, tail) = PROMPT_TEMPLATE.split_once("{OBJECT_LIST}").unwrap();
        let (mid, end) = tail.split_once("{TASK}").unwrap();
        assert_eq!(p, format!("{head}['a']{mid}T{end}"));
    }

    #[test]
    fn empty_object_list() {
        assert_eq!(build_prompt(&[], "x"), Err(PlannerError::EmptyObjectList));
    }

    #[test]
    fn python_repr_quotes() {
        assert_eq!(python_list(&objs(&["TV", "kid's cup"])), "['TV', \"kid's cup\"]");
    }

    #[test]
    fn template_hash_is_pinned() {
        let digest = Sha256::digest(PROMPT_TEMPLATE.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(hex, "15b6f48329999c41980bb9571bbc93622fc7b0090a13d29167139575b34539c4");
    }

    /// Every worked example inside the prompt, with the tuple it states.
    fn exemplars() -> Vec<(String, LLMPlan)> {
        let blocks: Vec<&str> = PROMPT_TEMPLATE.split("Object list: ").skip(1).collect();
        assert_eq!(blocks.len(), 12);
        let expected = [
            (Action::Grasp, "black pan", "handle", None),
            (Action::Press, "mechanical keyboard", "spacebar", None),
            (Action::Grasp, "knife", "handle", None),
            (Action::Grasp, "salt shaker", "base", None),
            (Action::PickAndPlace, "red cup", "rim", Some("blue cup")),
            (Action::Twist, "door knob", "rim", None),
            (Action::Twist, "washing machine", "dial", None),
            (Action::Grasp, "paper towel roll", "paper towel", None),
            (Action::Grasp, "magnifying glass", "handle", None),
            (Action::Grasp, "teddy bear", "head", None),
            (Action::PickAndPlace, "green mug", "handle", Some("cabinet")),
        ];
        blocks[..11]
            .iter()
            .zip(expected)
            .map(|(b, (a, o, p, pl))| {
                let answer: Vec<&str> = b.lines().skip(2).collect();
                (answer.join("\n"), LLMPlan::new(a, o, p, pl).unwrap())
            })
            .collect()
    }

    #[test]
    fn all_exemplars_parse() {
        for (text, plan) in exemplars() {
            assert_eq!(parse_response(&text).unwrap(), plan, "{text}");
        }
    }

    #[test]
    fn documented_examples() {
        let p = parse_response("Basic Action: grasp\nSequence: 1. black pan 2. handle").unwrap();
        assert_eq!(p, LLMPlan::new(Action::Grasp, "black pan", "handle", None).unwrap());
        let p = parse_response("Basic action: pick & place\nSequence: 1. red cup 2. rim\nPlace: blue cup").unwrap();
        assert_eq!(p.place.as_deref(), Some("blue cup"));
        assert!(matches!(parse_response("hello"), Err(PlannerError::UnparseableResponse(_))));
    }

    #[test]
    fn parse_edge_cases() {
        assert_eq!(
            parse_response(" grasp \nSequence: 1. knife 2. handle \\").unwrap(),
            LLMPlan::new(Action::Grasp, "knife", "handle", None).unwrap()
        );
        assert_eq!(
            parse_response("Basic action: juggle\nSequence: 1. a 2. b"),
            Err(PlannerError::UnknownAction("juggle".into()))
        );
        assert!(matches!(
            parse_response("Basic action: pick & place\nSequence: 1. cup 2. rim"),
            Err(PlannerError::UnparseableResponse(_))
        ));
        let p = parse_response("Basic action: grasp\nSequence: 1. cup 2. rim\nPlace: shelf").unwrap();
        assert_eq!(p.place, None);
        let p = parse_response(
            "BASIC ACTION: Pour\nSequence: 1. 2.5 l jug 2. handle\n\nObject list: ['x']\nQ: y\nBasic action: press",
        )
        .unwrap();
        assert_eq!(p, LLMPlan::new(Action::Pour, "2.5 l jug", "handle", None).unwrap());
        assert_eq!(Action::parse("Pick and Place").unwrap(), Action::PickAndPlace);
    }

    #[test]
    fn plan_json_uses_compact_action_names() {
        let p = LLMPlan::new(Action::PickAndPlace, "red cup", "rim", Some("blue cup")).unwrap();
        let v = serde_json::to_value(&p).unwrap();
        assert_eq!(v["action"], "pick&place");
        assert_eq!(serde_json::from_value::<LLMPlan>(v).unwrap(), p);
    }

    #[test]
    fn vote_examples() {
        let r = |o: &str, p: &str| format!("Basic action: grasp\nSequence: 1. {o} 2. {p}");
        let same = ScriptedClient::new(vec![r("mug", "handle"); 7]);
        let plan = majority_vote("grab the mug", &objs(&["mug"]), &same, 7).unwrap();
        assert_eq!(plan.pair(), ("mug", "handle"));
        let mix = ScriptedClient::new([
            r("a", "x"),
            r("b", "y"),
            r("a", "x"),
            r("c", "z"),
            r("b", "y"),
            r("a", "x"),
            "nonsense".into(),
        ]);
        assert_eq!(majority_vote("t", &objs(&["a"]), &mix, 7).unwrap().pair(), ("a", "x"));
        assert_eq!(majority_vote("t", &objs(&["a"]), &mix, 1).unwrap().pair(), ("a", "x"));
        assert_eq!(majority_vote("t", &objs(&["a"]), &mix, 4), Err(PlannerError::InvalidVoteCount(4)));
    }

    #[test]
    fn unavailable_and_unparseable() {
        let down = ScriptedClient::with_failures(vec![Err("timeout".into())]);
        assert!(matches!(majority_vote("t", &objs(&["a"]), &down, 3), Err(PlannerError::LLMUnavailable(_))));
        let junk = ScriptedClient::new(["hello"]);
        assert_eq!(majority_vote("t", &objs(&["a"]), &junk, 3), Err(PlannerError::NoParseableResponses(3)));
        let partial =
            ScriptedClient::with_failures(vec![Err("x".into()), Ok("Basic action: press\nSequence: 1. a 2. b".into())]);
        assert_eq!(majority_vote("t", &objs(&["a"]), &partial, 3).unwrap().action, Action::Press);
    }

    #[test]
    fn delimited_file() {
        let c = ScriptedClient::from_delimited(
            "Basic action: grasp\nSequence: 1. a 2. b\n---\n\n---\nBasic action: press\nSequence: 1. c 2. d\n",
        );
        assert_eq!(c.len(), 2);
        assert_eq!(c.complete("", 1).unwrap().lines().next(), Some("Basic action: press"));
    }

    #[test]
    fn config_validation_and_wire_format() {
        let mut c =
            LLMClientConfig { endpoint: "http://localhost:8000/v1/chat/completions".into(), ..Default::default() };
        assert!(c.validate().is_ok());
        let body = c.request_body("hi");
        assert_eq!(body["messages"][0]["content"], "hi");
        assert_eq!(body["temperature"], 0.7);
        c.timeout_s = 0.0;
        assert!(c.validate().is_err());
        let reply = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": "grasp"}}]});
        assert_eq!(chat_response_text(&reply).as_deref(), Some("grasp"));
    }

    fn phrase() -> impl Strategy<Value = String> {
        "[a-z][a-z -]{0,14}[a-z]".prop_map(|s| s.split_whitespace().collect::<Vec<_>>().join(" "))
    }

    fn plan() -> impl Strategy<Value = LLMPlan> {
        (0usize..5, phrase(), phrase(), phrase()).prop_map(|(a, o, p, pl)| {
            let action = Action::ALL[a];
            let place = (action == Action::PickAndPlace).then_some(pl.as_str());
            LLMPlan::new(action, &o, &p, place).unwrap()
        })
    }

    /// Independent tally: count with a map, then pick by (count desc, first index asc).
    fn oracle(plans: &[Option<LLMPlan>]) -> Option<(String, String, Action)> {
        let parsed: Vec<(usize, &LLMPlan)> =
            plans.iter().enumerate().filter_map(|(i, p)| p.as_ref().map(|p| (i, p))).collect();
        let mut counts: HashMap<(String, String), (usize, usize)> = HashMap::new();
        for &(i, p) in &parsed {
            let e = counts.entry((p.object.clone(), p.part.clone())).or_insert((0, i));
            e.0 += 1;
        }
        let ((o, pt), _) = counts.into_iter().min_by_key(|(_, (c, first))| (std::cmp::Reverse(*c), *first))?;
        let mut acounts: HashMap<Action, (usize, usize)> = HashMap::new();
        for &(i, p) in parsed.iter().filter(|(_, p)| p.object == o && p.part == pt) {
            let e = acounts.entry(p.action).or_insert((0, i));
            e.0 += 1;
        }
        let (a, _) = acounts.into_iter().min_by_key(|(_, (c, first))| (std::cmp::Reverse(*c), *first))?;
        Some((o, pt, a))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn format_parse_round_trip(p in plan()) {
            prop_assert_eq!(parse_response(&format_response(&p)).unwrap(), p);
        }

        #[test]
        fn vote_matches_counting_oracle(
            picks in prop::collection::vec((0usize..4, 0usize..5, prop::bool::weighted(0.15)), 1..10),
            pool in prop::collection::vec(plan(), 4),
        ) {
            let plans: Vec<Option<LLMPlan>> = picks.iter().map(|&(i, a, bad)| (!bad).then(|| {
                let base = &pool[i];
                let action = Action::ALL[a];
                let place = (action == Action::PickAndPlace).then_some("shelf");
                LLMPlan::new(action, &base.object, &base.part, place).unwrap()
            })).collect();
            let texts: Vec<String> = plans.iter().map(|p| p.as_ref().map_or("garbled".to_string(), format_response)).collect();
            match (vote_responses(&texts), oracle(&plans)) {
                (Ok(v), Some((o, pt, a))) => {
                    prop_assert_eq!((v.object.as_str(), v.part.as_str(), v.action), (o.as_str(), pt.as_str(), a));
                    prop_assert!(plans.iter().flatten().any(|p| p.pair() == v.pair()));
                }
                (Err(PlannerError::NoParseableResponses(_)), None) => {}
                (got, want) => prop_assert!(false, "{:?} vs {:?}", got, want),
            }
        }

        #[test]
        fn vote_ignores_order_without_ties(
            counts in prop::collection::vec(1usize..4, 2..4), seed in any::<u64>(),
        ) {
            let mut texts = Vec::new();
            let top = counts[0] + 3;
            for (i, &c) in counts.iter().enumerate() {
                let n = if i == 0 { top } else { c };
                texts.extend(std::iter::repeat_n(format!("Basic action: grasp\nSequence: 1. o{i} 2. p"), n));
            }
            let mut shuffled = texts.clone();
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(vote_responses(&texts).unwrap(), vote_responses(&shuffled).unwrap());
        }
    }
}
