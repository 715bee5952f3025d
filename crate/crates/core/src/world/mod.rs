//! Deterministic household simulator.
//!
//! Action semantics:
//!
//! | action      | requires                         | effect                                        |
//! |-------------|----------------------------------|-----------------------------------------------|
//! | `walk(r)`   | room exists                      | agent moves, proximity cleared                 |
//! | `walk(o)`   | `o` placed somewhere or held     | agent moves to `o`'s room, proximity = {o}     |
//! | `find(o)`   | `o` in agent's room or held      | proximity = {o}, whole room becomes visible    |
//! | `grab(o)`   | close to `o`, a free hand        | `o` held and flagged grabbed                   |
//! | `sit(o)`    | close to `o`, `o` sittable       | `o` flagged sat_on                             |
//! | `eat(o)`    | holding `o`, `o` edible          | `o` flagged eaten and removed from the world   |
//! | `open(o)`   | close to `o`, `o` a container    | `o` flagged open                               |
//! | `close_obj` | close to `o`, `o` a container    | open flag cleared                              |
//! | `switch_on` | close to `o`                     | `o` flagged on                                 |
//! | `put_back`  | holding `o`                      | `o` placed in the agent's room                 |
//!
//! Moving (`walk`, `find`) makes the agent stand up, clearing `sat_on`.
//! A failed action leaves the state untouched.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::plan::{Predicate, Relation};

/// Hands available to the agent.
pub const HAND_CAPACITY: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    Grabbed,
    Eaten,
    SatOn,
    Open,
    On,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Sittable,
    Edible,
    Container,
}

impl Property {
    pub fn from_name(name: &str) -> Option<Property> {
        match name {
            "sittable" => Some(Property::Sittable),
            "edible" => Some(Property::Edible),
            "container" => Some(Property::Container),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Property::Sittable => "sittable",
            Property::Edible => "edible",
            Property::Container => "container",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Walk,
    Find,
    Grab,
    Sit,
    Eat,
    Open,
    CloseObj,
    SwitchOn,
    PutBack,
}

impl Verb {
    pub const ALL: [Verb; 9] = [
        Verb::Walk,
        Verb::Find,
        Verb::Grab,
        Verb::Sit,
        Verb::Eat,
        Verb::Open,
        Verb::CloseObj,
        Verb::SwitchOn,
        Verb::PutBack,
    ];

    /// Name used in plans, e.g. `close_obj`.
    pub fn name(self) -> &'static str {
        match self {
            Verb::Walk => "walk",
            Verb::Find => "find",
            Verb::Grab => "grab",
            Verb::Sit => "sit",
            Verb::Eat => "eat",
            Verb::Open => "open",
            Verb::CloseObj => "close_obj",
            Verb::SwitchOn => "switch_on",
            Verb::PutBack => "put_back",
        }
    }

    /// Label used in feedback messages, e.g. `SIT`.
    pub fn label(self) -> &'static str {
        match self {
            Verb::Walk => "WALK",
            Verb::Find => "FIND",
            Verb::Grab => "GRAB",
            Verb::Sit => "SIT",
            Verb::Eat => "EAT",
            Verb::Open => "OPEN",
            Verb::CloseObj => "CLOSE",
            Verb::SwitchOn => "SWITCHON",
            Verb::PutBack => "PUTBACK",
        }
    }

    pub fn from_name(name: &str) -> Option<Verb> {
        Verb::ALL.iter().copied().find(|v| v.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimAction {
    pub verb: Verb,
    pub target: String,
}

impl SimAction {
    pub fn new(verb: Verb, target: impl Into<String>) -> Self {
        SimAction {
            verb,
            target: target.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("`{0}` expects exactly one object argument")]
    BadArguments(String),
    #[error("relation `{0}` cannot be evaluated against the world")]
    UnsupportedRelation(Relation),
    #[error("unknown room `{0}`")]
    UnknownRoom(String),
    #[error("unknown property `{0}`")]
    UnknownProperty(String),
    #[error("duplicate id `{0}`")]
    Duplicate(String),
    #[error("goal spec must contain at least one predicate")]
    EmptyGoals,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub ok: bool,
    /// Empty when `ok`.
    pub feedback_message: String,
    pub observations: Vec<String>,
}

/// Snapshot of the simulated household.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    rooms: BTreeSet<String>,
    /// Every object the world was built with, eaten ones included.
    properties: BTreeMap<String, BTreeSet<Property>>,
    locations: BTreeMap<String, String>,
    flags: BTreeMap<String, BTreeSet<Flag>>,
    agent_room: String,
    proximity: BTreeSet<String>,
    visible: BTreeSet<String>,
    held: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct WorldBuilder {
    rooms: Vec<String>,
    objects: Vec<(String, String, Vec<String>)>,
    agent_room: Option<String>,
}

impl WorldBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn room(mut self, id: &str) -> Self {
        self.rooms.push(id.to_string());
        self
    }

    pub fn object(mut self, id: &str, room: &str, properties: &[&str]) -> Self {
        self.objects.push((
            id.to_string(),
            room.to_string(),
            properties.iter().map(|p| p.to_string()).collect(),
        ));
        self
    }

    pub fn agent_in(mut self, room: &str) -> Self {
        self.agent_room = Some(room.to_string());
        self
    }

    pub fn build(self) -> Result<WorldState, SimError> {
        let mut rooms = BTreeSet::new();
        for r in self.rooms {
            if !rooms.insert(r.clone()) {
                return Err(SimError::Duplicate(r));
            }
        }
        let mut properties = BTreeMap::new();
        let mut locations = BTreeMap::new();
        for (id, room, props) in self.objects {
            if rooms.contains(&id) || properties.contains_key(&id) {
                return Err(SimError::Duplicate(id));
            }
            if !rooms.contains(&room) {
                return Err(SimError::UnknownRoom(room));
            }
            let props = props
                .iter()
                .map(|p| Property::from_name(p).ok_or_else(|| SimError::UnknownProperty(p.clone())))
                .collect::<Result<BTreeSet<_>, _>>()?;
            properties.insert(id.clone(), props);
            locations.insert(id, room);
        }
        let agent_room = match self.agent_room {
            Some(r) if rooms.contains(&r) => r,
            Some(r) => return Err(SimError::UnknownRoom(r)),
            None => rooms
                .iter()
                .next()
                .cloned()
                .ok_or_else(|| SimError::UnknownRoom(String::new()))?,
        };
        Ok(WorldState {
            rooms,
            properties,
            locations,
            flags: BTreeMap::new(),
            agent_room,
            proximity: BTreeSet::new(),
            visible: BTreeSet::new(),
            held: Vec::new(),
        })
    }
}

impl WorldState {
    pub fn rooms(&self) -> &BTreeSet<String> {
        &self.rooms
    }

    pub fn object_ids(&self) -> impl Iterator<Item = &String> {
        self.properties.keys()
    }

    pub fn agent_room(&self) -> &str {
        &self.agent_room
    }

    pub fn proximity(&self) -> &BTreeSet<String> {
        &self.proximity
    }

    pub fn visible(&self) -> &BTreeSet<String> {
        &self.visible
    }

    pub fn held(&self) -> &[String] {
        &self.held
    }

    pub fn location(&self, object: &str) -> Option<&str> {
        self.locations.get(object).map(String::as_str)
    }

    pub fn has_flag(&self, object: &str, flag: Flag) -> bool {
        self.flags.get(object).is_some_and(|f| f.contains(&flag))
    }

    pub fn flags_of(&self, object: &str) -> BTreeSet<Flag> {
        self.flags.get(object).cloned().unwrap_or_default()
    }

    pub fn has_property(&self, object: &str, property: Property) -> bool {
        self.properties.get(object).is_some_and(|p| p.contains(&property))
    }

    pub fn properties_of(&self, object: &str) -> BTreeSet<Property> {
        self.properties.get(object).cloned().unwrap_or_default()
    }

    pub fn is_room(&self, id: &str) -> bool {
        self.rooms.contains(id)
    }

    pub fn is_object(&self, id: &str) -> bool {
        self.properties.contains_key(id)
    }

    pub fn exists(&self, id: &str) -> bool {
        self.is_room(id) || self.is_object(id)
    }

    /// Objects currently placed in `room`.
    pub fn objects_in(&self, room: &str) -> impl Iterator<Item = &String> + '_ {
        let room = room.to_string();
        self.locations.iter().filter(move |(_, r)| **r == room).map(|(o, _)| o)
    }

    /// Checks every structural invariant; returns the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.held.len() > HAND_CAPACITY {
            return Err(format!("holding {} items", self.held.len()));
        }
        for h in &self.held {
            if !self.has_flag(h, Flag::Grabbed) {
                return Err(format!("{h} held without grabbed flag"));
            }
            if self.held.iter().filter(|x| *x == h).count() > 1 {
                return Err(format!("{h} held twice"));
            }
        }
        for p in &self.proximity {
            if !self.visible.contains(p) {
                return Err(format!("{p} close but not visible"));
            }
        }
        for v in &self.visible {
            let in_room = self.location(v) == Some(self.agent_room.as_str());
            if !in_room && !self.held.contains(v) {
                return Err(format!("{v} visible but neither in the agent's room nor held"));
            }
        }
        for (obj, flags) in &self.flags {
            if flags.contains(&Flag::Eaten)
                && (self.locations.contains_key(obj) || self.proximity.contains(obj) || self.held.contains(obj))
            {
                return Err(format!("eaten {obj} still present"));
            }
        }
        if !self.rooms.contains(&self.agent_room) {
            return Err(format!("agent in unknown room {}", self.agent_room));
        }
        Ok(())
    }

    fn room_view(&self) -> BTreeSet<String> {
        let mut v: BTreeSet<String> = self.objects_in(&self.agent_room).cloned().collect();
        v.extend(self.held.iter().cloned());
        v
    }

    fn stand_up(&mut self) {
        for flags in self.flags.values_mut() {
            flags.remove(&Flag::SatOn);
        }
    }

    fn set_flag(&mut self, object: &str, flag: Flag) {
        self.flags.entry(object.to_string()).or_default().insert(flag);
    }

    fn clear_flag(&mut self, object: &str, flag: Flag) {
        if let Some(f) = self.flags.get_mut(object) {
            f.remove(&flag);
            if f.is_empty() {
                self.flags.remove(object);
            }
        }
    }

    fn visibility_fact(&self, target: &str) -> String {
        if self.is_room(target) {
            return format!("agent is in {}", self.agent_room);
        }
        if self.has_flag(target, Flag::Eaten) {
            format!("{target} has been eaten")
        } else if self.held.iter().any(|h| h == target) {
            format!("{target} is in hand")
        } else if self.proximity.contains(target) {
            format!("{target} is near")
        } else if self.visible.contains(target) {
            format!("{target} is visible but not near")
        } else {
            format!("{target} is not visible")
        }
    }

    fn holding_fact(&self) -> String {
        match self.held.as_slice() {
            [] => "agent is holding nothing".to_string(),
            [one] => format!("agent is holding {one}"),
            many => format!("agent is holding {}", many.join(" and ")),
        }
    }

    /// Observations reported for an action on `target`.
    pub fn observe(&self, target: &str) -> Vec<String> {
        alloc::vec![self.visibility_fact(target), self.holding_fact()]
    }
}

fn not_rel(relation: &str, target: &str, verb: Verb) -> String {
    format!("not {relation} to <{target}> when [{}]", verb.label())
}

/// Applies one action. On failure the returned state equals the input.
pub fn apply_action(state: &WorldState, action: &SimAction) -> Result<(WorldState, ActionOutcome), SimError> {
    let target = action.target.as_str();
    if !state.exists(target) {
        return Err(SimError::UnknownObject(action.target.clone()));
    }
    let mut next = state.clone();
    let failure = step(&mut next, action.verb, target);
    let (result, ok, feedback_message) = match failure {
        None => (next, true, String::new()),
        Some(msg) => (state.clone(), false, msg),
    };
    let observations = result.observe(target);
    Ok((
        result,
        ActionOutcome {
            ok,
            feedback_message,
            observations,
        },
    ))
}

/// Mutates `s`; returns the failure message when a precondition fails.
fn step(s: &mut WorldState, verb: Verb, target: &str) -> Option<String> {
    let is_room = s.is_room(target);
    let close = s.proximity.contains(target);
    let holding = s.held.iter().any(|h| h == target);
    match verb {
        Verb::Walk => {
            if is_room {
                s.agent_room = target.to_string();
                s.proximity.clear();
                s.visible = s.held.iter().cloned().collect();
            } else if holding {
                s.proximity = BTreeSet::from([target.to_string()]);
            } else if let Some(room) = s.locations.get(target).cloned() {
                s.agent_room = room;
                s.visible = s.room_view();
                s.proximity = BTreeSet::from([target.to_string()]);
            } else {
                return Some(format!("<{target}> not found in <{}>", s.agent_room));
            }
            s.stand_up();
        }
        Verb::Find => {
            let here = if is_room {
                target == s.agent_room
            } else {
                holding || s.location(target) == Some(s.agent_room.as_str())
            };
            if !here {
                return Some(format!("<{target}> not found in <{}>", s.agent_room));
            }
            s.visible = s.room_view();
            s.proximity = if is_room {
                BTreeSet::new()
            } else {
                BTreeSet::from([target.to_string()])
            };
            s.stand_up();
        }
        Verb::Grab => {
            if holding {
                return None;
            }
            if !close {
                return Some(not_rel("close", target, verb));
            }
            if s.held.len() >= HAND_CAPACITY {
                return Some(format!("hands full when [{}]", verb.label()));
            }
            s.held.push(target.to_string());
            s.locations.remove(target);
            s.set_flag(target, Flag::Grabbed);
        }
        Verb::Sit => {
            if !close {
                return Some(not_rel("close", target, verb));
            }
            if !s.has_property(target, Property::Sittable) {
                return Some(not_rel("sittable", target, verb));
            }
            s.stand_up();
            s.set_flag(target, Flag::SatOn);
        }
        Verb::Eat => {
            if !holding {
                return Some(not_rel("holding", target, verb));
            }
            if !s.has_property(target, Property::Edible) {
                return Some(not_rel("edible", target, verb));
            }
            s.held.retain(|h| h != target);
            s.proximity.remove(target);
            s.visible.remove(target);
            s.clear_flag(target, Flag::Grabbed);
            s.set_flag(target, Flag::Eaten);
        }
        Verb::Open | Verb::CloseObj => {
            if !close {
                return Some(not_rel("close", target, verb));
            }
            if !s.has_property(target, Property::Container) {
                return Some(not_rel("container", target, verb));
            }
            if verb == Verb::Open {
                s.set_flag(target, Flag::Open);
            } else {
                s.clear_flag(target, Flag::Open);
            }
        }
        Verb::SwitchOn => {
            if !close {
                return Some(not_rel("close", target, verb));
            }
            s.set_flag(target, Flag::On);
        }
        Verb::PutBack => {
            if !holding {
                return Some(not_rel("holding", target, verb));
            }
            s.held.retain(|h| h != target);
            s.clear_flag(target, Flag::Grabbed);
            s.locations.insert(target.to_string(), s.agent_room.clone());
        }
    }
    None
}

pub fn eval_predicate(state: &WorldState, pred: &Predicate) -> Result<bool, SimError> {
    let subject = pred.subject.as_str();
    if pred.relation == Relation::Contains {
        return Err(SimError::UnsupportedRelation(Relation::Contains));
    }
    if !state.exists(subject) {
        return Err(SimError::UnknownObject(pred.subject.clone()));
    }
    let holds = match pred.relation {
        Relation::Close => state.proximity.contains(subject),
        Relation::Holding => state.held.iter().any(|h| h == subject),
        Relation::Visible => state.visible.contains(subject),
        Relation::Eaten => state.has_flag(subject, Flag::Eaten),
        Relation::SatOn => state.has_flag(subject, Flag::SatOn),
        Relation::Open => state.has_flag(subject, Flag::Open),
        Relation::On => state.has_flag(subject, Flag::On),
        Relation::Grabbed => state.has_flag(subject, Flag::Grabbed),
        Relation::Contains => unreachable!(),
    };
    Ok(holds != pred.negated)
}

/// Goal predicates of a task, checked against a world at construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalSpec {
    predicates: Vec<Predicate>,
}

impl GoalSpec {
    pub fn new(predicates: Vec<Predicate>, world: &WorldState) -> Result<Self, SimError> {
        if predicates.is_empty() {
            return Err(SimError::EmptyGoals);
        }
        for p in &predicates {
            if p.relation == Relation::Contains {
                return Err(SimError::UnsupportedRelation(p.relation));
            }
            if !world.exists(&p.subject) {
                return Err(SimError::UnknownObject(p.subject.clone()));
            }
        }
        Ok(GoalSpec { predicates })
    }

    pub fn predicates(&self) -> &[Predicate] {
        &self.predicates
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalScore {
    /// 1 iff every goal holds and the trace ended without error.
    pub sr: u8,
    /// Satisfied goals over all goals.
    pub psr: f64,
}

pub fn score_goals(final_state: &WorldState, trace_ok: bool, goals: &GoalSpec) -> GoalScore {
    let total = goals.predicates.len();
    let satisfied = goals
        .predicates
        .iter()
        .filter(|p| eval_predicate(final_state, p).unwrap_or(false))
        .count();
    let psr = satisfied as f64 / total as f64;
    let sr = u8::from(satisfied == total && trace_ok);
    GoalScore { sr, psr }
}

#[cfg(test)]
mod tests;
