//! The provider-facing side of a session, and its record/replay wrappers.
//!
//! Everything non-deterministic a session consumes (chat replies, follow-up
//! decisions, transcripts) flows through [`Agent`]. Wrapping an agent in
//! [`RecordingAgent`] captures those outputs so a session log can be replayed
//! through [`ReplayAgent`] without any provider.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::gateway::{AudioRef, ChatExchange, Gateway, GatewayError};
use crate::interview::{FollowUpContext, FollowUpDecision, FollowUpPolicy, PolicyError};

pub trait Agent: FollowUpPolicy {
    fn chat_reply(&mut self, exchange: &ChatExchange) -> Result<String, GatewayError>;
    fn transcribe(&mut self, audio: &AudioRef) -> Result<String, GatewayError>;
}

/// Agent backed by a [`Gateway`] and a follow-up policy.
pub struct StudyAgent {
    gateway: Arc<Gateway>,
    policy: Box<dyn FollowUpPolicy + Send>,
}

impl StudyAgent {
    pub fn new(gateway: Arc<Gateway>, policy: Box<dyn FollowUpPolicy + Send>) -> Self {
        StudyAgent { gateway, policy }
    }
}

impl FollowUpPolicy for StudyAgent {
    fn decide(&mut self, ctx: &FollowUpContext<'_>) -> Result<FollowUpDecision, PolicyError> {
        self.policy.decide(ctx)
    }
}

impl Agent for StudyAgent {
    fn chat_reply(&mut self, exchange: &ChatExchange) -> Result<String, GatewayError> {
        self.gateway.chat_reply(exchange)
    }

    fn transcribe(&mut self, audio: &AudioRef) -> Result<String, GatewayError> {
        self.gateway.transcribe(audio)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recorded<T> {
    Ok(T),
    Err(String),
}

impl<T: Clone> Recorded<T> {
    fn from_result<E: std::fmt::Display>(r: &Result<T, E>) -> Self {
        match r {
            Ok(v) => Recorded::Ok(v.clone()),
            Err(e) => Recorded::Err(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentOutput {
    ChatReply(Recorded<String>),
    FollowUp(Recorded<FollowUpDecision>),
    Transcript(Recorded<String>),
}

pub struct RecordingAgent<'a> {
    inner: &'a mut dyn Agent,
    outputs: Vec<AgentOutput>,
}

impl<'a> RecordingAgent<'a> {
    pub fn new(inner: &'a mut dyn Agent) -> Self {
        RecordingAgent {
            inner,
            outputs: Vec::new(),
        }
    }

    pub fn into_outputs(self) -> Vec<AgentOutput> {
        self.outputs
    }
}

impl FollowUpPolicy for RecordingAgent<'_> {
    fn decide(&mut self, ctx: &FollowUpContext<'_>) -> Result<FollowUpDecision, PolicyError> {
        let r = self.inner.decide(ctx);
        self.outputs
            .push(AgentOutput::FollowUp(Recorded::from_result(&r)));
        r
    }
}

impl Agent for RecordingAgent<'_> {
    fn chat_reply(&mut self, exchange: &ChatExchange) -> Result<String, GatewayError> {
        let r = self.inner.chat_reply(exchange);
        self.outputs
            .push(AgentOutput::ChatReply(Recorded::from_result(&r)));
        r
    }

    fn transcribe(&mut self, audio: &AudioRef) -> Result<String, GatewayError> {
        let r = self.inner.transcribe(audio);
        self.outputs
            .push(AgentOutput::Transcript(Recorded::from_result(&r)));
        r
    }
}

/// Serves previously recorded outputs in order.
#[derive(Debug, Default)]
pub struct ReplayAgent {
    queue: VecDeque<AgentOutput>,
}

impl ReplayAgent {
    pub fn new(outputs: impl IntoIterator<Item = AgentOutput>) -> Self {
        ReplayAgent {
            queue: outputs.into_iter().collect(),
        }
    }

    pub fn push(&mut self, outputs: impl IntoIterator<Item = AgentOutput>) {
        self.queue.extend(outputs);
    }

    pub fn remaining(&self) -> usize {
        self.queue.len()
    }

    fn diverged(expected: &str) -> GatewayError {
        GatewayError::Recorded(format!("replay diverged: expected a recorded {expected}"))
    }
}

impl FollowUpPolicy for ReplayAgent {
    fn decide(&mut self, _ctx: &FollowUpContext<'_>) -> Result<FollowUpDecision, PolicyError> {
        match self.queue.pop_front() {
            Some(AgentOutput::FollowUp(Recorded::Ok(d))) => Ok(d),
            Some(AgentOutput::FollowUp(Recorded::Err(e))) => {
                Err(PolicyError::Provider(GatewayError::Recorded(e)))
            }
            _ => Err(PolicyError::Provider(Self::diverged("follow-up decision"))),
        }
    }
}

impl Agent for ReplayAgent {
    fn chat_reply(&mut self, _exchange: &ChatExchange) -> Result<String, GatewayError> {
        match self.queue.pop_front() {
            Some(AgentOutput::ChatReply(Recorded::Ok(s))) => Ok(s),
            Some(AgentOutput::ChatReply(Recorded::Err(e))) => Err(GatewayError::Recorded(e)),
            _ => Err(Self::diverged("chat reply")),
        }
    }

    fn transcribe(&mut self, _audio: &AudioRef) -> Result<String, GatewayError> {
        match self.queue.pop_front() {
            Some(AgentOutput::Transcript(Recorded::Ok(s))) => Ok(s),
            Some(AgentOutput::Transcript(Recorded::Err(e))) => Err(GatewayError::Recorded(e)),
            _ => Err(Self::diverged("transcript")),
        }
    }
}
