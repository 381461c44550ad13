//! Idealized key rates (expected key bits per time slot) for the layered
//! construction and for two baseline implementations: scheduled GHZ states
//! and scheduled EPR pairs with one-time-pad relaying.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keystructure::{Layer, LayeredKeyStructure, StructureError, UserId};
use crate::planner::{plan_metrics, ConstructionPlan};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RateError {
    #[error("event probabilities sum to {0}, expected 1")]
    ProbabilitySum(f64),
    #[error("invalid probability {0}")]
    Probability(f64),
    #[error("recipients overlap within one event: {0:?}")]
    OverlappingRecipients(Vec<UserId>),
    #[error("distribution needs at least two users and dimension ≥ 2")]
    BadDistribution,
    #[error("distribution to {0:?} is not a layer of the structure")]
    NotALayer(Vec<UserId>),
    #[error("EPR schedules distribute pairs only, got {0:?}")]
    NotAPair(Vec<UserId>),
    #[error("no relay over scheduled links connects layer {0}")]
    NoRelayPath(Layer),
    #[error("invalid grid `{0}` (expected start:stop:step)")]
    Grid(String),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error("schedule file: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Implementation {
    Layered,
    Ghz,
    Epr,
}

impl fmt::Display for Implementation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Implementation::Layered => "layered",
            Implementation::Ghz => "ghz",
            Implementation::Epr => "epr",
        })
    }
}

/// One maximally entangled state of local dimension `dim` sent to `users`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub users: Vec<UserId>,
    pub dim: u32,
}

impl Distribution {
    pub fn new<U: Into<UserId>>(users: impl IntoIterator<Item = U>, dim: u32) -> Self {
        let mut users: Vec<UserId> = users.into_iter().map(Into::into).collect();
        users.sort();
        Distribution { users, dim }
    }

    pub fn bits(&self) -> f64 {
        (self.dim as f64).log2()
    }
}

/// What the source sends in one time slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub probability: f64,
    pub distributions: Vec<Distribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub events: Vec<Event>,
}

impl Schedule {
    pub fn new(events: Vec<Event>) -> Result<Self, RateError> {
        let s = Schedule { events };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), RateError> {
        let mut total = 0.0;
        for e in &self.events {
            if !(0.0..=1.0).contains(&e.probability) {
                return Err(RateError::Probability(e.probability));
            }
            total += e.probability;
            let mut seen = BTreeSet::new();
            for d in &e.distributions {
                if d.users.len() < 2 || d.dim < 2 {
                    return Err(RateError::BadDistribution);
                }
                if d.users.iter().any(|u| !seen.insert(u.clone())) {
                    return Err(RateError::OverlappingRecipients(d.users.clone()));
                }
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(RateError::ProbabilitySum(total));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, RateError> {
        let s: Schedule = serde_json::from_str(text).map_err(|e| RateError::Json(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRate {
    pub layer: Layer,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub implementation: Implementation,
    pub layers: Vec<LayerRate>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl RateReport {
    pub fn rate(&self, layer: &Layer) -> Option<f64> {
        self.layers.iter().find(|l| &l.layer == layer).map(|l| l.rate)
    }

    pub fn rates(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.rate).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, RateError> {
        serde_json::from_str(text).map_err(|e| RateError::Json(e.to_string()))
    }

    /// Aligned two-column text table.
    pub fn to_table(&self) -> String {
        let names: Vec<String> = self.layers.iter().map(|l| l.layer.to_string()).collect();
        let w = names.iter().map(|n| n.chars().count()).max().unwrap_or(0).max(5);
        let mut out = format!("implementation: {}\n{:<w$}  rate\n", self.implementation, "layer");
        for (n, l) in names.iter().zip(&self.layers) {
            out.push_str(&format!("{n:<w$}  {:.6}\n", l.rate));
        }
        for note in &self.notes {
            out.push_str(&format!("note: {note}\n"));
        }
        out
    }
}

/// Rates of a layered construction plan: the probability of reaching each
/// layer's node times `log2` of its key alphabet.
pub fn layered_rates(plan: &ConstructionPlan) -> RateReport {
    let m = plan_metrics(plan);
    RateReport {
        implementation: Implementation::Layered,
        layers: m
            .layers
            .into_iter()
            .zip(m.bits)
            .map(|(layer, rate)| LayerRate { layer, rate })
            .collect(),
        notes: Vec::new(),
    }
}

fn as_layer(k: &LayeredKeyStructure, users: &[UserId]) -> Option<usize> {
    Layer::new(users.iter().cloned()).ok().and_then(|l| k.layer_index(&l))
}

/// Each GHZ state sent to a layer contributes `p · log2(d)` to it.
pub fn ghz_schedule_rates(k: &LayeredKeyStructure, schedule: &Schedule) -> Result<RateReport, RateError> {
    schedule.validate()?;
    let mut rates = vec![0.0; k.num_layers()];
    for e in &schedule.events {
        for d in &e.distributions {
            let l = as_layer(k, &d.users).ok_or_else(|| RateError::NotALayer(d.users.clone()))?;
            rates[l] += e.probability * d.bits();
        }
    }
    Ok(RateReport {
        implementation: Implementation::Ghz,
        layers: k
            .layers()
            .iter()
            .cloned()
            .zip(rates)
            .map(|(layer, rate)| LayerRate { layer, rate })
            .collect(),
        notes: Vec::new(),
    })
}

/// Order in which layers claim link keys.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConversionPolicy {
    /// Larger layers first, then canonical order. Leftover link keys end up
    /// in the two-user layers.
    #[default]
    LargestFirst,
    SmallestFirst,
}

/// Link keys spent on one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relay {
    pub layer: Layer,
    pub rate: f64,
    /// Links of the relay tree (a path whenever one exists).
    pub links: Vec<(UserId, UserId)>,
}

impl Relay {
    /// Link-key bits consumed per layer bit by each member.
    pub fn per_user_load(&self) -> BTreeMap<UserId, usize> {
        let mut m: BTreeMap<UserId, usize> =
            self.layer.members().iter().map(|u| (u.clone(), 0)).collect();
        for (a, b) in &self.links {
            *m.get_mut(a).unwrap() += 1;
            *m.get_mut(b).unwrap() += 1;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EprAccounting {
    pub report: RateReport,
    /// Link-key rate per scheduled pair before conversion.
    pub links: Vec<((UserId, UserId), f64)>,
    pub leftover: Vec<((UserId, UserId), f64)>,
    pub relays: Vec<Relay>,
}

type Link = (usize, usize);

fn link(a: usize, b: usize) -> Link {
    (a.min(b), a.max(b))
}

/// Best Hamiltonian path over `members` using scheduled links: largest
/// bottleneck, ties broken by the lexicographically first member order.
fn best_path(members: &[usize], rates: &BTreeMap<Link, f64>) -> Option<Vec<Link>> {
    fn rec(
        path: &mut Vec<usize>,
        left: &mut Vec<usize>,
        rates: &BTreeMap<Link, f64>,
        bottleneck: f64,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        if left.is_empty() {
            if best.as_ref().is_none_or(|(b, _)| bottleneck > *b) {
                *best = Some((bottleneck, path.clone()));
            }
            return;
        }
        for i in 0..left.len() {
            let next = left[i];
            let b = match path.last() {
                None => f64::INFINITY,
                Some(&p) => match rates.get(&link(p, next)) {
                    Some(&r) => bottleneck.min(r),
                    None => continue,
                },
            };
            left.remove(i);
            path.push(next);
            rec(path, left, rates, b, best);
            path.pop();
            left.insert(i, next);
        }
    }
    let mut best = None;
    rec(&mut Vec::new(), &mut members.to_vec(), rates, f64::INFINITY, &mut best);
    best.map(|(_, p)| p.windows(2).map(|w| link(w[0], w[1])).collect())
}

/// Maximum-bottleneck spanning tree over scheduled links among `members`.
fn best_tree(members: &[usize], rates: &BTreeMap<Link, f64>) -> Option<Vec<Link>> {
    let mut edges: Vec<(Link, f64)> = rates
        .iter()
        .filter(|((a, b), _)| members.contains(a) && members.contains(b))
        .map(|(&l, &r)| (l, r))
        .collect();
    edges.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let mut comp: BTreeMap<usize, usize> = members.iter().map(|&m| (m, m)).collect();
    fn find(c: &mut BTreeMap<usize, usize>, x: usize) -> usize {
        let p = c[&x];
        if p == x {
            return x;
        }
        let r = find(c, p);
        c.insert(x, r);
        r
    }
    let mut tree = Vec::new();
    for ((a, b), _) in edges {
        let (ra, rb) = (find(&mut comp, a), find(&mut comp, b));
        if ra != rb {
            comp.insert(ra, rb);
            tree.push((a, b));
        }
    }
    (tree.len() + 1 == members.len()).then_some(tree)
}

const PATH_SEARCH_LIMIT: usize = 8;

/// EPR pairs produce `p · log2(d)` link-key bits per slot on their pair. A
/// layer of size `m` turns one bit on each of `m − 1` relay links into one
/// layer bit: the first member generates the key and each member forwards it
/// under a one-time pad.
pub fn epr_relay_accounting(
    k: &LayeredKeyStructure,
    schedule: &Schedule,
    policy: ConversionPolicy,
) -> Result<EprAccounting, RateError> {
    schedule.validate()?;
    let idx = |u: &UserId| k.user_index(u).ok_or_else(|| RateError::NotALayer(vec![u.clone()]));
    let mut rates: BTreeMap<Link, f64> = BTreeMap::new();
    for e in &schedule.events {
        for d in &e.distributions {
            if d.users.len() != 2 {
                return Err(RateError::NotAPair(d.users.clone()));
            }
            let l = link(idx(&d.users[0])?, idx(&d.users[1])?);
            *rates.entry(l).or_default() += e.probability * d.bits();
        }
    }
    let initial = rates.clone();
    let mut order: Vec<usize> = (0..k.num_layers()).collect();
    match policy {
        ConversionPolicy::LargestFirst => order.sort_by_key(|&l| (std::cmp::Reverse(k.layers()[l].len()), l)),
        ConversionPolicy::SmallestFirst => order.sort_by_key(|&l| (k.layers()[l].len(), l)),
    }
    let mut layer_rates = vec![0.0; k.num_layers()];
    let mut relays = Vec::new();
    let mut notes = Vec::new();
    for l in order {
        let layer = &k.layers()[l];
        let members: Vec<usize> = layer.members().iter().map(&idx).collect::<Result<_, _>>()?;
        let path = if members.len() <= PATH_SEARCH_LIMIT {
            best_path(&members, &rates)
        } else {
            None
        };
        let links = match path {
            Some(p) => p,
            None => {
                let t = best_tree(&members, &rates).ok_or_else(|| RateError::NoRelayPath(layer.clone()))?;
                notes.push(format!("layer {layer} relays over a spanning tree"));
                t
            }
        };
        let r = links.iter().map(|l| rates[l]).fold(f64::INFINITY, f64::min).max(0.0);
        for l in &links {
            *rates.get_mut(l).unwrap() -= r;
        }
        layer_rates[l] = r;
        let users = k.users();
        relays.push(Relay {
            layer: layer.clone(),
            rate: r,
            links: links.iter().map(|&(a, b)| (users[a].clone(), users[b].clone())).collect(),
        });
    }
    let named = |m: &BTreeMap<Link, f64>| {
        m.iter()
            .map(|(&(a, b), &r)| ((k.users()[a].clone(), k.users()[b].clone()), r))
            .collect()
    };
    Ok(EprAccounting {
        report: RateReport {
            implementation: Implementation::Epr,
            layers: k
                .layers()
                .iter()
                .cloned()
                .zip(layer_rates)
                .map(|(layer, rate)| LayerRate { layer, rate })
                .collect(),
            notes,
        },
        links: named(&initial),
        leftover: named(&rates),
        relays,
    })
}

pub fn epr_schedule_rates(k: &LayeredKeyStructure, schedule: &Schedule) -> Result<RateReport, RateError> {
    Ok(epr_relay_accounting(k, schedule, ConversionPolicy::default())?.report)
}

/// One event per partition, each with probability `1/ℓ`, sending a
/// `2^ℓ`-dimensional state to every layer of the partition. `None` when
/// the structure has no partition decomposition.
pub fn partition_schedule(k: &LayeredKeyStructure) -> Option<Schedule> {
    let parts = k.partition_decomposition()?;
    let l = parts.len();
    let dim = 1u32 << l;
    Some(Schedule {
        events: parts
            .iter()
            .map(|p| Event {
                probability: 1.0 / l as f64,
                distributions: p
                    .layers
                    .iter()
                    .map(|&i| Distribution::new(k.layers()[i].members().iter().cloned(), dim))
                    .collect(),
            })
            .collect(),
    })
}

/// The three-user structure `{1,2,3}, {1,2}` used by the rate comparison.
pub fn three_user_structure() -> LayeredKeyStructure {
    LayeredKeyStructure::new(["1", "2", "3"], [vec!["1", "2", "3"], vec!["1", "2"]])
        .expect("valid structure")
}

/// EPR baseline: a 4-dimensional pair to {1,2} with probability `p`, a qubit
/// pair to {1,3} otherwise.
pub fn three_user_epr_schedule(p: f64) -> Schedule {
    Schedule {
        events: vec![
            Event { probability: p, distributions: vec![Distribution::new(["1", "2"], 4)] },
            Event { probability: 1.0 - p, distributions: vec![Distribution::new(["1", "3"], 2)] },
        ],
    }
}

/// GHZ baseline: a 4-dimensional pair to {1,2} with probability `p`, a qubit
/// GHZ state to {1,2,3} otherwise.
pub fn three_user_ghz_schedule(p: f64) -> Schedule {
    Schedule {
        events: vec![
            Event { probability: p, distributions: vec![Distribution::new(["1", "2"], 4)] },
            Event { probability: 1.0 - p, distributions: vec![Distribution::new(["1", "2", "3"], 2)] },
        ],
    }
}

/// `(r₁₂₃, r₁₂)` for the three implementations of the three-user structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeUserRates {
    pub p: f64,
    pub epr: (f64, f64),
    pub ghz: (f64, f64),
    pub layered: (f64, f64),
}

/// Closed forms. The EPR relay needs one {1,2} bit and one {1,3} bit per
/// tripartite bit, so `r₁₂₃ = min(1 − p, 2p)` and {1,2} keeps the rest.
pub fn three_user_reference_rates(p: f64) -> ThreeUserRates {
    ThreeUserRates {
        p,
        epr: ((1.0 - p).min(2.0 * p), (3.0 * p - 1.0).max(0.0)),
        ghz: (1.0 - p, 2.0 * p),
        layered: (1.0, 1.0),
    }
}

/// The same triple computed from the schedules and the flat plan.
pub fn three_user_computed_rates(p: f64) -> Result<ThreeUserRates, RateError> {
    let k = three_user_structure();
    let pair = |r: RateReport| (r.layers[0].rate, r.layers[1].rate);
    Ok(ThreeUserRates {
        p,
        epr: pair(epr_schedule_rates(&k, &three_user_epr_schedule(p))?),
        ghz: pair(ghz_schedule_rates(&k, &three_user_ghz_schedule(p))?),
        layered: pair(layered_rates(&ConstructionPlan::flat(&k))),
    })
}

/// `start:stop:step`, inclusive of `stop`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| ((self.start + i as f64 * self.step) * 1e12).round() / 1e12)
            .collect()
    }
}

impl FromStr for Grid {
    type Err = RateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RateError::Grid(s.to_string());
        let parts: Vec<f64> = s
            .split(':')
            .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        let [start, stop, step] = parts[..] else { return Err(bad()) };
        if step.is_nan() || step <= 0.0 || stop < start || !(0.0..=1.0).contains(&start) || stop > 1.0 {
            return Err(bad());
        }
        Ok(Grid { start, stop, step })
    }
}

pub fn three_user_sweep(grid: &Grid) -> Result<Vec<ThreeUserRates>, RateError> {
    grid.points().into_iter().map(three_user_computed_rates).collect()
}

/// Grid point maximizing `objective` over a one-parameter schedule family;
/// the first maximizer wins ties.
pub fn grid_search(
    grid: &Grid,
    rates: impl Fn(f64) -> Result<RateReport, RateError>,
    objective: impl Fn(&RateReport) -> f64,
) -> Result<(f64, RateReport), RateError> {
    let mut best: Option<(f64, f64, RateReport)> = None;
    for p in grid.points() {
        let r = rates(p)?;
        let v = objective(&r);
        if best.as_ref().is_none_or(|(bv, _, _)| v > *bv) {
            best = Some((v, p, r));
        }
    }
    let (_, p, r) = best.ok_or_else(|| RateError::Grid("empty grid".into()))?;
    Ok((p, r))
}
