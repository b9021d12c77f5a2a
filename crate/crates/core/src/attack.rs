//! Adversarial coalition-finding algorithms: greedy influence-maximizing
//! biasing, the semi-random heavy/random restriction process, common random
//! sets for families of functions, and the full k-round protocol biasing
//! algorithm with its chiseling loop and the multi-bit wrapper.

use crate::boolfn::{BoolFnError, BooleanFunction, CoordSet};
use crate::dyadic::Dyadic;
use crate::protocol::{
    exact_adversary_value, exact_honest_value, for_each_optimal_play, induced_round_function,
    restrict_protocol, truth_table, Outcome, OutcomeDomain, OutcomeTarget, ProtocolError,
    ProtocolSpec, Transcript,
};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("not enough mass: Pr = {prob}, need at least {need}")]
    NotEnoughMass { prob: f64, need: f64 },
    #[error("runtime assertion failed: {what}")]
    RuntimeAssert { what: String, trace: Vec<String> },
    #[error("invalid attack parameters: {0}")]
    Params(String),
    #[error("empty family")]
    EmptyFamily,
    #[error(transparent)]
    BoolFn(#[from] BoolFnError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

pub type Result<T> = std::result::Result<T, AttackError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ParamMode {
    PaperFormula,
    DeskOverride,
}

/// Knobs of the biasing algorithms. `h` bounds each heavy set, `c` is the
/// chisel floor (target size of each C_j), `delta` the allowed family
/// failure fraction, `r` the step budget of the semi-random process,
/// `candidates` the number of sampled common sets, `boost_target` the
/// intermediate bias level the chisel loop re-establishes.
#[derive(Debug, Clone, Serialize)]
pub struct AttackParams {
    pub h: u32,
    pub c: u32,
    pub gamma: f64,
    pub delta: f64,
    pub r: u32,
    pub candidates: u32,
    pub boost_target: f64,
    pub mode: ParamMode,
}

impl AttackParams {
    /// Desk-scale defaults: the asymptotic formulas degenerate at laboratory
    /// sizes, so small explicit values are the default mode.
    pub fn desk(gamma: f64, arity: u32) -> AttackParams {
        AttackParams {
            h: 4,
            c: 1,
            gamma,
            delta: 1.0 / 3.0,
            r: arity,
            candidates: 50,
            boost_target: 0.75,
            mode: ParamMode::DeskOverride,
        }
    }

    /// Parameters from the asymptotic expressions:
    /// `h = (log^(k-1) l)^(1/10^4)`, `c = l / (log^(k-1) l)^(10^4)`,
    /// `r = ceil(100 l log2(1/delta) / (gamma log2(h/2)))`. Errors when the
    /// values degenerate (h < 8 or c < 1), which they do at desk scale.
    pub fn paper_formula(k: usize, l: u32, gamma: f64, delta: f64) -> Result<AttackParams> {
        if !(0.0 < gamma && gamma < 0.5) || !(0.0 < delta && delta < 0.5) {
            return Err(AttackError::Params(format!(
                "gamma={gamma}, delta={delta} must lie in (0, 1/2)"
            )));
        }
        let base = crate::construct::iterated_log2(l, k as u32 - 1) as f64;
        let h = base.powf(1e-4).floor();
        let c = (l as f64 / base.powi(4).powi(2500)).floor();
        if h < 8.0 {
            return Err(AttackError::Params(format!(
                "degenerate schedule: h = {h} < 8 at l = {l}, k = {k}; use explicit overrides"
            )));
        }
        if c < 1.0 {
            return Err(AttackError::Params(format!(
                "degenerate schedule: c = {c} < 1 at l = {l}, k = {k}; use explicit overrides"
            )));
        }
        let h = h as u32;
        if (h as f64) > l as f64 || (h as f64) * (h as f64 / 2.0).log2() >= 40.0 * l as f64 / gamma
        {
            return Err(AttackError::Params(format!(
                "h = {h} violates the heavy-set preconditions at l = {l}"
            )));
        }
        let r = (100.0 * l as f64 * (1.0 / delta).log2() / (gamma * (h as f64 / 2.0).log2())).ceil()
            as u32;
        Ok(AttackParams {
            h,
            c: c as u32,
            gamma,
            delta,
            r,
            candidates: 50,
            boost_target: 0.75,
            mode: ParamMode::PaperFormula,
        })
    }

    fn check(&self, arity: u32) -> Result<()> {
        if self.h < 2 {
            return Err(AttackError::Params("h must be >= 2".into()));
        }
        if self.c < 1 || self.c > arity {
            return Err(AttackError::Params(format!(
                "c={} not in [1, {arity}]",
                self.c
            )));
        }
        if !(0.0 < self.gamma && self.gamma < 0.5) {
            return Err(AttackError::Params(format!(
                "gamma={} not in (0, 1/2)",
                self.gamma
            )));
        }
        if !(0.5 < self.boost_target && self.boost_target < 1.0) {
            return Err(AttackError::Params(format!(
                "boost_target={} not in (1/2, 1)",
                self.boost_target
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StepCase {
    Heavy,
    Random,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProcessStep {
    pub coordinate: u32,
    pub case: StepCase,
    /// X_j: the restricted coordinate's influence at selection time.
    pub influence: Dyadic,
    /// Z_j: running influence sum.
    pub z: Dyadic,
    /// Probability toward the target after this restriction.
    pub prob: Dyadic,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ProcessTrace {
    pub steps: Vec<ProcessStep>,
}

/// A function under an accumulating optimal restriction, with the surviving
/// coordinates tracked by their original 1-based indices.
struct RestrictState {
    f: Option<BooleanFunction>,
    const_value: bool,
    /// remaining[i] = original coordinate of current coordinate i+1.
    remaining: Vec<u32>,
    o: bool,
}

impl RestrictState {
    fn new(f: BooleanFunction, o: bool) -> RestrictState {
        let remaining = (1..=f.arity()).collect();
        RestrictState {
            f: Some(f),
            const_value: false,
            remaining,
            o,
        }
    }

    fn prob(&self) -> Dyadic {
        match &self.f {
            Some(f) => f.prob(self.o),
            None => {
                if self.const_value == self.o {
                    Dyadic::ONE
                } else {
                    Dyadic::ZERO
                }
            }
        }
    }

    /// (current index, original coordinate, influence) triples.
    fn influences(&self) -> Vec<(u32, u32, Dyadic)> {
        match &self.f {
            Some(f) => f
                .influences()
                .into_iter()
                .enumerate()
                .map(|(i, inf)| (i as u32 + 1, self.remaining[i], inf))
                .collect(),
            None => Vec::new(),
        }
    }

    /// Optimally restricts the current coordinate `cur` toward the target.
    fn fix_toward(&mut self, cur: u32) -> Result<()> {
        let f = self.f.take().expect("fix_toward on a constant");
        if f.arity() == 1 {
            let can = f.get(0) == self.o || f.get(1) == self.o;
            self.const_value = if can { self.o } else { !self.o };
        } else {
            self.f = Some(f.restrict_optimal(&CoordSet::singleton(cur), self.o)?);
        }
        self.remaining.remove(cur as usize - 1);
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KklResult {
    pub coalition: CoordSet,
    pub final_prob: Dyadic,
    pub trace: ProcessTrace,
}

/// Greedy influence biasing: repeatedly restrict the argmax-influence
/// coordinate (ties to the lowest index) toward `o` until the probability
/// reaches `1 - gamma`.
pub fn kkl_greedy(f: &BooleanFunction, o: bool, gamma: f64) -> Result<KklResult> {
    if !(0.0 < gamma && gamma < 0.5) {
        return Err(AttackError::Params(format!(
            "gamma={gamma} not in (0, 1/2)"
        )));
    }
    let mut state = RestrictState::new(f.clone(), o);
    let mut prob = state.prob();
    if !prob.at_least(gamma) {
        return Err(AttackError::NotEnoughMass {
            prob: prob.to_f64(),
            need: gamma,
        });
    }
    let mut picked = Vec::new();
    let mut trace = ProcessTrace::default();
    let mut z = Dyadic::ZERO;
    while !prob.at_least(1.0 - gamma) {
        let (cur, orig, inf) = state
            .influences()
            .into_iter()
            .max_by(|a, b| a.2.cmp(&b.2).then(b.1.cmp(&a.1)))
            .expect("non-constant function while prob < 1-gamma");
        state.fix_toward(cur)?;
        let new_prob = state.prob();
        let expected = prob.add(&inf.half());
        if new_prob != expected {
            return Err(AttackError::RuntimeAssert {
                what: format!("restriction gain identity: got {new_prob:?}, expected {expected:?}"),
                trace: vec![format!("coordinate {orig}")],
            });
        }
        z = z.add(&inf);
        prob = new_prob;
        picked.push(orig);
        trace.steps.push(ProcessStep {
            coordinate: orig,
            case: StepCase::Heavy,
            influence: inf,
            z,
            prob,
        });
    }
    picked.sort_unstable();
    Ok(KklResult {
        coalition: CoordSet::from_sorted(picked)?,
        final_prob: prob,
        trace,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProcessResult {
    pub b_r: CoordSet,
    pub b_h: CoordSet,
    pub success: bool,
    pub final_prob: Dyadic,
    pub trace: ProcessTrace,
}

enum RandomPick<'a> {
    Rng(&'a mut dyn RngCore),
    /// Derandomized: consume the earliest not-yet-used element of the order.
    Order {
        order: &'a [u32],
        cursor: usize,
    },
}

impl RandomPick<'_> {
    /// Picks the next random-case coordinate among the surviving originals.
    fn next(&mut self, remaining: &[u32]) -> Option<u32> {
        match self {
            RandomPick::Rng(rng) => {
                if remaining.is_empty() {
                    None
                } else {
                    Some(remaining[rng.random_range(0..remaining.len())])
                }
            }
            RandomPick::Order { order, cursor } => {
                while *cursor < order.len() {
                    let v = order[*cursor];
                    *cursor += 1;
                    if remaining.contains(&v) {
                        return Some(v);
                    }
                }
                None
            }
        }
    }
}

fn run_process(
    f: &BooleanFunction,
    o: bool,
    params: &AttackParams,
    pick: &mut RandomPick<'_>,
) -> Result<ProcessResult> {
    params.check(f.arity())?;
    let target = 1.0 - params.gamma;
    let mut state = RestrictState::new(f.clone(), o);
    let mut prob = state.prob();
    if !prob.at_least(params.gamma) {
        return Err(AttackError::NotEnoughMass {
            prob: prob.to_f64(),
            need: params.gamma,
        });
    }
    let mut b_r = Vec::new();
    let mut b_h = Vec::new();
    let mut trace = ProcessTrace::default();
    let mut z = Dyadic::ZERO;
    // influence >= 2/h checked exactly: h * influence >= 2
    let h_factor = Dyadic::from_int(params.h as u64);
    let two = Dyadic::from_int(2);
    for _ in 0..params.r {
        if prob.at_least(target) || state.f.is_none() {
            break;
        }
        let infl = state.influences();
        let heavy = infl
            .iter()
            .filter(|(_, _, x)| x.mul(&h_factor) >= two)
            .max_by(|a, b| a.2.cmp(&b.2).then(b.1.cmp(&a.1)))
            .cloned();
        let (cur, orig, inf, case) = match heavy {
            Some((cur, orig, inf)) => {
                b_h.push(orig);
                if b_h.len() as u32 > params.h {
                    return Err(AttackError::RuntimeAssert {
                        what: format!("|B_H| = {} exceeded h = {}", b_h.len(), params.h),
                        trace: trace.steps.iter().map(|s| format!("{s:?}")).collect(),
                    });
                }
                (cur, orig, inf, StepCase::Heavy)
            }
            None => {
                let Some(orig) = pick.next(&state.remaining) else {
                    break;
                };
                let cur = state
                    .remaining
                    .iter()
                    .position(|&v| v == orig)
                    .expect("surviving") as u32
                    + 1;
                let inf = infl[cur as usize - 1].2;
                b_r.push(orig);
                (cur, orig, inf, StepCase::Random)
            }
        };
        state.fix_toward(cur)?;
        let new_prob = state.prob();
        let expected = prob.add(&inf.half());
        if new_prob != expected {
            return Err(AttackError::RuntimeAssert {
                what: format!("restriction gain identity: got {new_prob:?}, expected {expected:?}"),
                trace: vec![format!("coordinate {orig}")],
            });
        }
        z = z.add(&inf);
        prob = new_prob;
        trace.steps.push(ProcessStep {
            coordinate: orig,
            case,
            influence: inf,
            z,
            prob,
        });
    }
    b_r.sort_unstable();
    b_h.sort_unstable();
    Ok(ProcessResult {
        b_r: CoordSet::from_sorted(b_r)?,
        b_h: CoordSet::from_sorted(b_h)?,
        success: prob.at_least(target),
        final_prob: prob,
        trace,
    })
}

/// The semi-random process: while the bias target is unmet, restrict the
/// argmax coordinate when some influence reaches `2/h` (heavy case, into
/// B_H), otherwise a uniformly random surviving coordinate (into B_R).
pub fn semi_random_process(
    f: &BooleanFunction,
    o: bool,
    params: &AttackParams,
    rng: &mut impl RngCore,
) -> Result<ProcessResult> {
    run_process(f, o, params, &mut RandomPick::Rng(rng))
}

/// Derandomized process: random-case steps consume the earliest unused
/// element of the fixed order instead of fresh randomness.
pub fn process_with_order(
    f: &BooleanFunction,
    o: bool,
    params: &AttackParams,
    order: &[u32],
) -> Result<ProcessResult> {
    run_process(f, o, params, &mut RandomPick::Order { order, cursor: 0 })
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilyResult {
    /// Random-case coordinates consumed by the winning candidate, unioned
    /// over the covered members.
    pub b_r: CoordSet,
    /// Heavy set per family member; None where the process failed.
    pub assignments: Vec<Option<CoordSet>>,
    pub coverage: f64,
    pub winning_candidate: u32,
    pub seed: u64,
}

/// Adversary value when `s` may cover every coordinate (where the optimal
/// restriction machinery would reject a full restriction).
fn optimal_value(f: &BooleanFunction, s: &CoordSet, o: bool) -> Result<Dyadic> {
    let within: Vec<u32> = s.iter().filter(|&i| i <= f.arity()).collect();
    if within.len() as u32 >= f.arity() {
        return Ok(if f.prob(o) > Dyadic::ZERO {
            Dyadic::ONE
        } else {
            Dyadic::ZERO
        });
    }
    Ok(f.restrict_optimal(&CoordSet::from_sorted(within)?, o)?
        .prob(o))
}

/// Samples `candidates` random orders of the coordinates and, for each, runs
/// the derandomized process on every family member; returns the candidate
/// covering the largest fraction. Each covered member's heavy set, together
/// with the common random set, is re-verified to bias it exactly.
pub fn family_common_set(
    family: &[(BooleanFunction, bool)],
    params: &AttackParams,
    seed: u64,
) -> Result<FamilyResult> {
    if family.is_empty() {
        return Err(AttackError::EmptyFamily);
    }
    let arity = family[0].0.arity();
    params.check(arity)?;
    if family.iter().any(|(f, _)| f.arity() != arity) {
        return Err(AttackError::Params(
            "family members must share an arity".into(),
        ));
    }
    for (f, o) in family {
        let prob = f.prob(*o);
        if !prob.at_least(params.gamma) {
            return Err(AttackError::NotEnoughMass {
                prob: prob.to_f64(),
                need: params.gamma,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // per family member: (consumed random coords, heavy set) when covered
    type CandidateResults = Vec<Option<(CoordSet, CoordSet)>>;
    let mut best: Option<(usize, usize, CandidateResults)> = None;
    for cand in 0..params.candidates.max(1) {
        let mut order: Vec<u32> = (1..=arity).collect();
        order.shuffle(&mut rng);
        let mut results = Vec::with_capacity(family.len());
        let mut covered = 0usize;
        for (f, o) in family {
            let res = run_process(
                f,
                *o,
                params,
                &mut RandomPick::Order {
                    order: &order,
                    cursor: 0,
                },
            )?;
            if res.success {
                covered += 1;
                results.push(Some((res.b_r, res.b_h)));
            } else {
                results.push(None);
            }
        }
        if best.as_ref().is_none_or(|(c, _, _)| covered > *c) {
            best = Some((covered, cand as usize, results));
        }
    }
    let (covered, winning_candidate, results) = best.expect("candidates >= 1");
    let mut b_r = CoordSet::empty();
    for r in results.iter().flatten() {
        b_r = b_r.union(&r.0);
    }
    let mut assignments = Vec::with_capacity(family.len());
    for ((f, o), r) in family.iter().zip(&results) {
        match r {
            Some((_, b_h)) => {
                let v = optimal_value(f, &b_r.union(b_h), *o)?;
                if !v.at_least(1.0 - params.gamma) {
                    return Err(AttackError::RuntimeAssert {
                        what: format!(
                            "covered member not biased on re-verification: {v:?} < 1-{}",
                            params.gamma
                        ),
                        trace: vec![],
                    });
                }
                assignments.push(Some(b_h.clone()));
            }
            None => assignments.push(None),
        }
    }
    Ok(FamilyResult {
        b_r,
        assignments,
        coverage: covered as f64 / family.len() as f64,
        winning_candidate: winning_candidate as u32,
        seed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackReport {
    pub protocol: String,
    pub players: u32,
    pub rounds: usize,
    pub gamma: f64,
    pub seed: u64,
    /// Common random set (final-round coordinates).
    pub b_r: CoordSet,
    /// Union of the chiseled heavy-set containers (final-round coordinates).
    pub b_h: CoordSet,
    /// Bad players recruited by the recursive boosts (earlier rounds).
    pub b_i: CoordSet,
    /// Final coalition over players.
    pub coalition: CoordSet,
    /// Corrupted coordinates per round.
    pub per_round: Vec<CoordSet>,
    pub claimed_value: Dyadic,
    /// Recomputed by the protocol oracle, never copied from bookkeeping.
    pub verified_value: Dyadic,
    /// The asymptotic coalition budget C*l/(gamma*log^(k) l) with C = 10^7,
    /// reported for accounting only.
    pub coalition_bound: f64,
    pub log: Vec<String>,
}

fn coalition_budget(l: u32, k: usize, gamma: f64) -> f64 {
    1e7 * l as f64 / (gamma * crate::construct::iterated_log2(l, k as u32) as f64)
}

fn full_player_set(l: u32) -> CoordSet {
    CoordSet::from_sorted((1..=l).collect()).expect("sorted")
}

/// Keyed by round words; None is the failure symbol.
type HeavyMap = HashMap<Vec<u64>, Option<CoordSet>>;

fn jth_largest(set: &CoordSet, j: usize) -> Option<u32> {
    let m = set.members();
    if j == 0 || j > m.len() {
        None
    } else {
        Some(m[m.len() - j])
    }
}

fn make_pi_temp(p: &ProtocolSpec, g: &HeavyMap) -> Result<ProtocolSpec> {
    let k = p.rounds();
    let g = std::sync::Arc::new(g.clone());
    let bits = p.bits_per_round()[..k - 1].to_vec();
    Ok(ProtocolSpec::new(
        format!("{}|heavy-indicator", p.name()),
        p.players(),
        bits,
        OutcomeDomain::Coin,
        move |t: &Transcript| {
            let words: Vec<u64> = (0..t.rounds()).map(|i| t.round(i).as_word()).collect();
            Outcome::Coin(matches!(g.get(&words), Some(Some(_))))
        },
    )?)
}

/// Realized prefix transcripts under the coalition's canonical optimal play
/// toward `g != bot`, weighted by good-assignment counts.
fn survivor_distribution(
    pi_temp: &ProtocolSpec,
    b_i: &CoordSet,
) -> Result<(HashMap<Vec<u64>, u64>, u64)> {
    let mut counts: HashMap<Vec<u64>, u64> = HashMap::new();
    let mut total = 0u64;
    for_each_optimal_play(pi_temp, b_i, &OutcomeTarget::Coin(true), |words| {
        *counts.entry(words.to_vec()).or_insert(0) += 1;
        total += 1;
    })?;
    Ok((counts, total))
}

struct ChiselRun<'a> {
    p: &'a ProtocolSpec,
    params: &'a AttackParams,
    rng: ChaCha8Rng,
    g: HeavyMap,
    b_i: CoordSet,
    b_i_per_round: Vec<CoordSet>,
    log: Vec<String>,
}

impl ChiselRun<'_> {
    /// Ensures the indicator protocol is biasable to `1 - gamma_p` with the
    /// current earlier-round coalition, recruiting more players if needed.
    fn boost(&mut self, gamma_p: f64, seed: u64) -> Result<()> {
        let pi_temp = make_pi_temp(self.p, &self.g)?;
        let current = exact_adversary_value(&pi_temp, &self.b_i, &OutcomeTarget::Coin(true))?;
        if current.at_least(1.0 - gamma_p) {
            return Ok(());
        }
        let restricted = if self.b_i.is_empty() {
            pi_temp.clone()
        } else {
            restrict_protocol(&pi_temp, &self.b_i, &OutcomeTarget::Coin(true))?
        };
        let mut params = self.params.clone();
        params.gamma = gamma_p;
        let rep = bias_protocol_seeded(&restricted, &params, seed)?;
        for (i, coords) in rep.per_round.iter().enumerate() {
            self.b_i_per_round[i] = self.b_i_per_round[i].union(coords);
        }
        self.b_i = self.b_i.union(&rep.coalition);
        self.log.push(format!(
            "boost to {}: recruited {} (value {})",
            1.0 - gamma_p,
            rep.coalition,
            rep.verified_value
        ));
        let after = exact_adversary_value(
            &make_pi_temp(self.p, &self.g)?,
            &self.b_i,
            &OutcomeTarget::Coin(true),
        )?;
        if !after.at_least(1.0 - gamma_p) {
            return Err(AttackError::RuntimeAssert {
                what: format!("boost to {} reached only {after:?}", 1.0 - gamma_p),
                trace: self.log.clone(),
            });
        }
        Ok(())
    }
}

/// Biases a k-round single-bit-per-round COIN protocol toward outcome 1.
pub fn bias_protocol(p: &ProtocolSpec, params: &AttackParams, seed: u64) -> Result<AttackReport> {
    if p.bits_per_round().iter().any(|&r| r != 1) {
        return Err(AttackError::Params(
            "bias_protocol requires one bit per round; use the multibit wrapper".into(),
        ));
    }
    bias_protocol_seeded(p, params, seed)
}

fn bias_protocol_seeded(
    p: &ProtocolSpec,
    params: &AttackParams,
    seed: u64,
) -> Result<AttackReport> {
    if p.domain() != OutcomeDomain::Coin {
        return Err(AttackError::Params(
            "bias_protocol needs a COIN protocol".into(),
        ));
    }
    p.check_exact_budget()?;
    params.check(p.players())?;
    let gamma = params.gamma;
    let l = p.players();
    let k = p.rounds();
    let honest = exact_honest_value(p, &OutcomeTarget::Coin(true))?;
    if !honest.at_least(gamma) {
        return Err(AttackError::NotEnoughMass {
            prob: honest.to_f64(),
            need: gamma,
        });
    }
    let bound = coalition_budget(l, k, gamma);

    if k == 1 {
        let f = truth_table(p)?;
        let res = kkl_greedy(&f, true, gamma)?;
        let verified = exact_adversary_value(p, &res.coalition, &OutcomeTarget::Coin(true))?;
        if !verified.at_least(1.0 - gamma) {
            return Err(AttackError::RuntimeAssert {
                what: format!("oracle value {verified:?} below 1-{gamma}"),
                trace: vec![],
            });
        }
        return Ok(AttackReport {
            protocol: p.name().to_string(),
            players: l,
            rounds: 1,
            gamma,
            seed,
            b_r: CoordSet::empty(),
            b_h: res.coalition.clone(),
            b_i: CoordSet::empty(),
            coalition: res.coalition.clone(),
            per_round: vec![res.coalition],
            claimed_value: res.final_prob,
            verified_value: verified,
            coalition_bound: bound,
            log: res
                .trace
                .steps
                .iter()
                .map(|s| format!("greedy: coord {} influence {}", s.coordinate, s.influence))
                .collect(),
        });
    }

    // Step 1a: enumerate every prefix transcript and its induced last-round
    // function; the family keeps the prefixes with enough mass.
    let prefix_bits: u32 = (0..k - 1).map(|i| p.round_bits(i)).sum();
    let mut alphas: Vec<Vec<u64>> = Vec::with_capacity(1 << prefix_bits);
    let round_widths: Vec<u32> = (0..k - 1).map(|i| p.round_bits(i)).collect();
    for packed in 0..(1u64 << prefix_bits) {
        let mut words = Vec::with_capacity(k - 1);
        let mut rest = packed;
        for &w in &round_widths {
            words.push(rest & ((1u64 << w) - 1));
            rest >>= w;
        }
        alphas.push(words);
    }
    let gamma_m = gamma / 2.0;
    let mut family: Vec<(Vec<u64>, BooleanFunction)> = Vec::new();
    for alpha in &alphas {
        let f = induced_round_function(p, alpha)?;
        if f.prob(true).at_least(gamma_m) {
            family.push((alpha.clone(), f));
        }
    }
    let mut log = vec![format!(
        "family: {} of {} prefixes with mass >= {gamma_m}",
        family.len(),
        alphas.len()
    )];

    // Step 1b: a common random set plus per-prefix heavy sets.
    let mut fam_params = params.clone();
    fam_params.gamma = gamma_m;
    let members: Vec<(BooleanFunction, bool)> =
        family.iter().map(|(_, f)| (f.clone(), true)).collect();
    let fam = family_common_set(&members, &fam_params, seed)?;
    log.push(format!(
        "common set {} covers {:.3} of the family (candidate {})",
        fam.b_r, fam.coverage, fam.winning_candidate
    ));
    let mut g: HeavyMap = alphas.iter().map(|a| (a.clone(), None)).collect();
    for ((alpha, _), assignment) in family.iter().zip(&fam.assignments) {
        g.insert(alpha.clone(), assignment.clone());
    }
    let alive = g.values().filter(|v| v.is_some()).count() as u64;
    let alive_frac = alive as f64 / alphas.len() as f64;
    if alive_frac < gamma / 6.0 {
        return Err(AttackError::RuntimeAssert {
            what: format!("Pr[g != bot] = {alive_frac} < gamma/6 = {}", gamma / 6.0),
            trace: log,
        });
    }
    log.push(format!("Pr[g != bot] = {alive_frac}"));

    let mut run = ChiselRun {
        p,
        params,
        rng: ChaCha8Rng::seed_from_u64(seed ^ 0xc2b2_ae3d_27d4_eb4f),
        g,
        b_i: CoordSet::empty(),
        b_i_per_round: vec![CoordSet::empty(); k - 1],
        log,
    };

    // Step 1c: first boost, to 1 - gamma/6 (which is >= the loop target).
    run.boost(gamma / 6.0, seed.wrapping_add(1))?;

    // Step 2: chisel the heavy-set containers down to size c.
    let max_sz = run.g.values().flatten().map(|s| s.len()).max().unwrap_or(0);
    let mut containers: Vec<CoordSet> = vec![full_player_set(l); max_sz];
    let loop_gamma = 1.0 - params.boost_target;
    let mass_floor = params.boost_target / 2.0;
    let mut boost_round = 2u64;
    while let Some(j) = containers.iter().position(|c| c.len() as u32 > params.c) {
        let pi_temp = make_pi_temp(p, &run.g)?;
        let (dist, total) = survivor_distribution(&pi_temp, &run.b_i)?;
        let mut kept: Option<CoordSet> = None;
        for attempt in 0..16 {
            let mut members: Vec<u32> = containers[j].iter().collect();
            members.shuffle(&mut run.rng);
            let half_a: Vec<u32> = members[..members.len().div_ceil(2)].to_vec();
            let half_b: Vec<u32> = members[members.len().div_ceil(2)..].to_vec();
            let mass = |half: &[u32]| -> u64 {
                dist.iter()
                    .map(|(alpha, count)| match run.g.get(alpha) {
                        Some(Some(set)) => match jth_largest(set, j + 1) {
                            // prefixes whose heavy set is too small to have a
                            // j-th largest element survive any split of C_j
                            None => *count,
                            Some(v) if half.contains(&v) => *count,
                            Some(_) => 0,
                        },
                        _ => 0,
                    })
                    .sum()
            };
            let (m_a, m_b) = (mass(&half_a), mass(&half_b));
            let (best_half, best_mass) = if m_a >= m_b {
                (half_a, m_a)
            } else {
                (half_b, m_b)
            };
            if (best_mass as f64 / total as f64) >= mass_floor {
                run.log.push(format!(
                    "chisel C_{}: kept half with mass {}/{total} (attempt {attempt})",
                    j + 1,
                    best_mass
                ));
                kept = Some(CoordSet::new(best_half)?);
                break;
            }
        }
        let Some(half) = kept else {
            return Err(AttackError::RuntimeAssert {
                what: format!(
                    "no half of C_{} reached survival mass {mass_floor} in 16 attempts",
                    j + 1
                ),
                trace: run.log.clone(),
            });
        };
        containers[j] = half.clone();
        // null out escaping prefixes and restore the boost level
        let mut nulled = 0usize;
        for v in run.g.values_mut() {
            if let Some(set) = v {
                if let Some(gj) = jth_largest(set, j + 1) {
                    if !half.contains(gj) {
                        *v = None;
                        nulled += 1;
                    }
                }
            }
        }
        if nulled > 0 {
            run.log
                .push(format!("chisel C_{}: nulled {nulled} prefixes", j + 1));
        }
        run.boost(loop_gamma, seed.wrapping_add(boost_round))?;
        boost_round += 1;
    }

    // invariant (*): every surviving prefix's heavy set sits inside the containers
    for v in run.g.values().flatten() {
        for jj in 1..=v.len() {
            let gj = jth_largest(v, jj).expect("jj <= len");
            if !containers[jj - 1].contains(gj) {
                return Err(AttackError::RuntimeAssert {
                    what: format!("invariant violated: g_{jj} = {gj} escaped its container"),
                    trace: run.log.clone(),
                });
            }
        }
    }

    // Step 3: final boost to 1 - gamma/2.
    run.boost(gamma / 2.0, seed.wrapping_add(boost_round))?;

    // Step 4: assemble and verify via the protocol oracle.
    let b_h = containers
        .iter()
        .fold(CoordSet::empty(), |acc, c| acc.union(c));
    let coalition = fam.b_r.union(&b_h).union(&run.b_i);
    let verified = exact_adversary_value(p, &coalition, &OutcomeTarget::Coin(true))?;
    let mut per_round = run.b_i_per_round.clone();
    per_round.push(fam.b_r.union(&b_h));
    let claimed = exact_adversary_value(
        &make_pi_temp(p, &run.g)?,
        &run.b_i,
        &OutcomeTarget::Coin(true),
    )?;
    if !verified.at_least(1.0 - gamma) {
        return Err(AttackError::RuntimeAssert {
            what: format!("oracle value {verified:?} below 1-{gamma}"),
            trace: run.log.clone(),
        });
    }
    Ok(AttackReport {
        protocol: p.name().to_string(),
        players: l,
        rounds: k,
        gamma,
        seed,
        b_r: fam.b_r,
        b_h,
        b_i: run.b_i,
        coalition,
        per_round,
        claimed_value: claimed,
        verified_value: verified,
        coalition_bound: bound,
        log: run.log,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MultibitReport {
    /// The bit-level run, coordinates being (player, bit) slots.
    pub bit_report: AttackReport,
    /// Players owning any corrupted bit.
    pub coalition: CoordSet,
    /// Oracle value at player granularity (players corrupt all their bits,
    /// so this can only exceed the bit-level value).
    pub verified_value: Dyadic,
}

/// Biases a protocol with multi-bit messages: runs the bit-level algorithm
/// on the flattened view (each player's bits as separate one-bit players,
/// stride max r_i), then corrupts every player owning a corrupted bit.
pub fn bias_protocol_multibit(
    p: &ProtocolSpec,
    params: &AttackParams,
    seed: u64,
) -> Result<MultibitReport> {
    if p.domain() != OutcomeDomain::Coin {
        return Err(AttackError::Params(
            "bias_protocol needs a COIN protocol".into(),
        ));
    }
    let l = p.players();
    let k = p.rounds();
    let max_r = *p.bits_per_round().iter().max().expect("k >= 1");
    let bits_per_round = p.bits_per_round().to_vec();
    let inner = p.clone();
    let flat = ProtocolSpec::new(
        format!("{}|bits", p.name()),
        l * max_r,
        vec![1; k],
        OutcomeDomain::Coin,
        move |t: &Transcript| {
            let mut tp = Transcript::zeros(&inner);
            for (i, &r) in bits_per_round.iter().enumerate() {
                for player in 1..=l {
                    for b in 0..r {
                        let src = (player - 1) * max_r + b;
                        if t.round(i).get(src) {
                            tp.round_mut(i).set((player - 1) * r + b, true);
                        }
                    }
                }
            }
            inner.evaluate(&tp)
        },
    )?;
    let bit_report = bias_protocol_seeded(&flat, params, seed)?;
    let owners: Vec<u32> = bit_report
        .coalition
        .iter()
        .map(|bit| (bit - 1) / max_r + 1)
        .collect();
    let mut owners: Vec<u32> = owners;
    owners.sort_unstable();
    owners.dedup();
    let coalition = CoordSet::from_sorted(owners)?;
    let verified = exact_adversary_value(p, &coalition, &OutcomeTarget::Coin(true))?;
    if verified < bit_report.verified_value {
        return Err(AttackError::RuntimeAssert {
            what: format!(
                "player-level value {verified:?} below bit-level {:?}",
                bit_report.verified_value
            ),
            trace: bit_report.log.clone(),
        });
    }
    Ok(MultibitReport {
        bit_report,
        coalition,
        verified_value: verified,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeRow {
    pub protocol: String,
    pub coalition_size: usize,
    pub fraction: f64,
    pub value: f64,
    pub within_budget: bool,
    pub note: Option<String>,
}

/// Small registered corpus of k-round protocols at the given size.
pub fn standard_corpus(l: u32, k: usize) -> Vec<ProtocolSpec> {
    let mut out = Vec::new();
    let push = |out: &mut Vec<ProtocolSpec>, r: crate::protocol::Result<ProtocolSpec>| {
        if let Ok(p) = r {
            out.push(p);
        }
    };
    match k {
        1 => {
            push(
                &mut out,
                BooleanFunction::parity(l)
                    .map_err(Into::into)
                    .and_then(crate::protocol::one_round_fn),
            );
            if l % 2 == 1 {
                push(
                    &mut out,
                    BooleanFunction::majority(l)
                        .map_err(Into::into)
                        .and_then(crate::protocol::one_round_fn),
                );
            }
            push(
                &mut out,
                BooleanFunction::dictator(l, 1)
                    .map_err(Into::into)
                    .and_then(crate::protocol::one_round_fn),
            );
            push(
                &mut out,
                BooleanFunction::or_fn(l)
                    .map_err(Into::into)
                    .and_then(crate::protocol::one_round_fn),
            );
            for w in 2..l {
                if l.is_multiple_of(w) && l / w >= 2 {
                    push(
                        &mut out,
                        BooleanFunction::tribes(l / w, w)
                            .map_err(Into::into)
                            .and_then(crate::protocol::one_round_fn),
                    );
                    break;
                }
            }
        }
        2 => {
            push(&mut out, crate::protocol::parity_rounds(l, vec![1, 1]));
            push(&mut out, crate::protocol::select_then_vote(l));
            if l.is_multiple_of(2) {
                push(&mut out, crate::protocol::half_majority(l));
            }
            for w in 2..l {
                if l.is_multiple_of(w) && l / w >= 2 {
                    push(&mut out, crate::protocol::xor_tribes(l, l / w, w));
                    break;
                }
            }
        }
        _ => {}
    }
    out
}

/// Runs the biasing algorithm across the registered corpus and reports the
/// achieved coalition fractions.
pub fn round_lb_probe(
    l: u32,
    k: usize,
    budget_fraction: f64,
    params: &AttackParams,
    seed: u64,
) -> Vec<ProbeRow> {
    standard_corpus(l, k)
        .into_iter()
        .map(|p| {
            let name = p.name().to_string();
            match bias_protocol(&p, params, seed) {
                Ok(rep) => ProbeRow {
                    protocol: name,
                    coalition_size: rep.coalition.len(),
                    fraction: rep.coalition.len() as f64 / l as f64,
                    value: rep.verified_value.to_f64(),
                    within_budget: (rep.coalition.len() as f64) <= budget_fraction * l as f64,
                    note: None,
                },
                Err(e) => ProbeRow {
                    protocol: name,
                    coalition_size: 0,
                    fraction: 0.0,
                    value: 0.0,
                    within_budget: false,
                    note: Some(e.to_string()),
                },
            }
        })
        .collect()
}
