//! The full-information protocol model: multi-round execution with honest
//! players and adaptive bad coalitions, exact optimal-adversary evaluation by
//! backward induction, Monte Carlo estimation, and the leader-to-coin
//! reduction.
//!
//! Timing within a round is the worst case for honest players: good players
//! broadcast first, then the coalition responds seeing those bits together
//! with everything from earlier rounds. Backward induction maximizes over
//! deterministic joint responses of the coalition, which dominates both
//! readings of whether bad players may see each other's same-round bits.

use crate::boolfn::{BoolFnError, BooleanFunction, CoordSet, MAX_ARITY};
use crate::dyadic::Dyadic;
use crate::stats;
use itertools::Itertools;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use thiserror::Error;

/// Total transcript bits allowed on exact evaluation paths (2^22 leaves).
pub const EXACT_BUDGET: u32 = 22;

/// Default confidence for Monte Carlo intervals.
pub const MC_CONFIDENCE: f64 = 1.0 - 1e-6;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("exact evaluation needs {needed} transcript bits, budget is {budget}")]
    BudgetExceeded { needed: u32, budget: u32 },
    #[error("capacity: {0}")]
    Capacity(String),
    #[error("protocol has domain {found:?}, expected {expected:?}")]
    WrongDomain {
        expected: OutcomeDomain,
        found: OutcomeDomain,
    },
    #[error("coalition member {player} out of range for {players} players")]
    CoalitionOutOfRange { player: u32, players: u32 },
    #[error("transcript or strategy shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid protocol parameters: {0}")]
    Invalid(String),
    #[error(transparent)]
    BoolFn(#[from] BoolFnError),
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeDomain {
    Coin,
    Leader,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Coin(bool),
    Leader(u32),
}

/// Predicate over outcomes used by the exact adversary machinery.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutcomeTarget {
    Coin(bool),
    Leader(u32),
    /// Leader drawn from the given player set (the leader resilience event).
    LeaderIn(CoordSet),
}

impl OutcomeTarget {
    pub fn matches(&self, outcome: &Outcome) -> bool {
        match (self, outcome) {
            (OutcomeTarget::Coin(b), Outcome::Coin(o)) => b == o,
            (OutcomeTarget::Leader(p), Outcome::Leader(o)) => p == o,
            (OutcomeTarget::LeaderIn(set), Outcome::Leader(o)) => set.contains(*o),
            _ => false,
        }
    }

    pub fn label(&self) -> String {
        match self {
            OutcomeTarget::Coin(b) => format!("coin={}", *b as u8),
            OutcomeTarget::Leader(p) => format!("leader={p}"),
            OutcomeTarget::LeaderIn(set) => format!("leader_in={set}"),
        }
    }
}

/// Packed bit string; bit `j` of a round holds bit `j mod r` of player
/// `j / r + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitStr {
    len: u32,
    words: Vec<u64>,
}

impl BitStr {
    pub fn zeros(len: u32) -> BitStr {
        BitStr {
            len,
            words: vec![0; (len as usize).div_ceil(64).max(1)],
        }
    }

    pub fn from_word(len: u32, word: u64) -> BitStr {
        debug_assert!(len <= 64);
        let mut s = BitStr::zeros(len);
        s.words[0] = if len == 64 {
            word
        } else {
            word & ((1u64 << len) - 1)
        };
        s
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, idx: u32) -> bool {
        debug_assert!(idx < self.len);
        (self.words[(idx >> 6) as usize] >> (idx & 63)) & 1 == 1
    }

    pub fn set(&mut self, idx: u32, v: bool) {
        debug_assert!(idx < self.len);
        let w = (idx >> 6) as usize;
        if v {
            self.words[w] |= 1u64 << (idx & 63);
        } else {
            self.words[w] &= !(1u64 << (idx & 63));
        }
    }

    /// Low 64 bits as a word; only meaningful when `len <= 64`.
    pub fn as_word(&self) -> u64 {
        self.words[0]
    }

    pub fn fill_random(&mut self, rng: &mut impl RngCore) {
        for w in &mut self.words {
            *w = rng.next_u64();
        }
        let tail = self.len % 64;
        if tail != 0 {
            let last = self.words.len() - 1;
            self.words[last] &= (1u64 << tail) - 1;
        }
        if self.len == 0 {
            self.words[0] = 0;
        }
    }

    /// Reads `r` consecutive bits starting at `offset` (r <= 64).
    pub fn read_bits(&self, offset: u32, r: u32) -> u64 {
        debug_assert!(r <= 64 && offset + r <= self.len);
        let mut out = 0u64;
        for j in 0..r {
            if self.get(offset + j) {
                out |= 1u64 << j;
            }
        }
        out
    }

    pub fn write_bits(&mut self, offset: u32, r: u32, value: u64) {
        for j in 0..r {
            self.set(offset + j, (value >> j) & 1 == 1);
        }
    }
}

/// Per-round, per-player bit strings for one protocol execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    rounds: Vec<BitStr>,
}

impl Transcript {
    pub fn zeros(spec: &ProtocolSpec) -> Transcript {
        Transcript {
            rounds: (0..spec.rounds())
                .map(|i| BitStr::zeros(spec.round_bits(i)))
                .collect(),
        }
    }

    pub fn from_round_words(spec: &ProtocolSpec, words: &[u64]) -> Transcript {
        debug_assert_eq!(words.len(), spec.rounds());
        Transcript {
            rounds: words
                .iter()
                .enumerate()
                .map(|(i, &w)| BitStr::from_word(spec.round_bits(i), w))
                .collect(),
        }
    }

    pub fn rounds(&self) -> usize {
        self.rounds.len()
    }

    pub fn round(&self, i: usize) -> &BitStr {
        &self.rounds[i]
    }

    pub fn round_mut(&mut self, i: usize) -> &mut BitStr {
        &mut self.rounds[i]
    }

    /// Player `p`'s `r` bits in round `i` (players 1-based).
    pub fn player_bits(&self, i: usize, p: u32, r: u32) -> u64 {
        self.rounds[i].read_bits((p - 1) * r, r)
    }
}

type Evaluator = Arc<dyn Fn(&Transcript) -> Outcome + Send + Sync>;

/// A k-round protocol over `players` players sending `bits_per_round[i]` bits
/// in round `i`, with a pure deterministic transcript evaluator.
#[derive(Clone)]
pub struct ProtocolSpec {
    name: String,
    players: u32,
    bits_per_round: Vec<u32>,
    domain: OutcomeDomain,
    evaluator: Evaluator,
}

impl std::fmt::Debug for ProtocolSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "ProtocolSpec({}, k={}, players={}, bits={:?}, {:?})",
            self.name,
            self.rounds(),
            self.players,
            self.bits_per_round,
            self.domain
        )
    }
}

impl ProtocolSpec {
    pub fn new(
        name: impl Into<String>,
        players: u32,
        bits_per_round: Vec<u32>,
        domain: OutcomeDomain,
        evaluator: impl Fn(&Transcript) -> Outcome + Send + Sync + 'static,
    ) -> Result<ProtocolSpec> {
        if players == 0 {
            return Err(ProtocolError::Invalid("players must be >= 1".into()));
        }
        if bits_per_round.is_empty() || bits_per_round.contains(&0) {
            return Err(ProtocolError::Invalid(
                "each round must send >= 1 bit".into(),
            ));
        }
        Ok(ProtocolSpec {
            name: name.into(),
            players,
            bits_per_round,
            domain,
            evaluator: Arc::new(evaluator),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn players(&self) -> u32 {
        self.players
    }

    pub fn rounds(&self) -> usize {
        self.bits_per_round.len()
    }

    pub fn bits_per_round(&self) -> &[u32] {
        &self.bits_per_round
    }

    pub fn domain(&self) -> OutcomeDomain {
        self.domain
    }

    pub fn round_bits(&self, i: usize) -> u32 {
        self.players * self.bits_per_round[i]
    }

    pub fn total_bits(&self) -> u32 {
        (0..self.rounds()).map(|i| self.round_bits(i)).sum()
    }

    pub fn evaluate(&self, t: &Transcript) -> Outcome {
        debug_assert_eq!(t.rounds(), self.rounds());
        (self.evaluator)(t)
    }

    pub fn check_exact_budget(&self) -> Result<()> {
        let needed = self.total_bits();
        if needed > EXACT_BUDGET {
            return Err(ProtocolError::BudgetExceeded {
                needed,
                budget: EXACT_BUDGET,
            });
        }
        Ok(())
    }

    pub fn check_coalition(&self, coalition: &CoordSet) -> Result<()> {
        for p in coalition.iter() {
            if p == 0 || p > self.players {
                return Err(ProtocolError::CoalitionOutOfRange {
                    player: p,
                    players: self.players,
                });
            }
        }
        Ok(())
    }

    fn expect_domain(&self, expected: OutcomeDomain) -> Result<()> {
        if self.domain != expected {
            return Err(ProtocolError::WrongDomain {
                expected,
                found: self.domain,
            });
        }
        Ok(())
    }
}

/// Adaptive coalition strategy: `respond(i, t)` is called once the good
/// players' round-`i` bits are in `t` (bad positions zeroed) and must return
/// the coalition's packed round-`i` bits, `bits_per_round[i]` bits per member
/// in ascending player order.
#[derive(Clone)]
pub struct AdversaryStrategy {
    pub coalition: CoordSet,
    responder: Arc<Responder>,
}

type Responder = dyn Fn(usize, &Transcript) -> u64 + Send + Sync;

impl AdversaryStrategy {
    pub fn new(
        coalition: CoordSet,
        responder: impl Fn(usize, &Transcript) -> u64 + Send + Sync + 'static,
    ) -> AdversaryStrategy {
        AdversaryStrategy {
            coalition,
            responder: Arc::new(responder),
        }
    }

    /// Coalition that sends the same packed bits every round.
    pub fn constant(coalition: CoordSet, bits: u64) -> AdversaryStrategy {
        AdversaryStrategy::new(coalition, move |_, _| bits)
    }
}

/// Runs one honest execution, all bits uniform.
pub fn honest_run(p: &ProtocolSpec, rng: &mut impl RngCore) -> Outcome {
    let mut t = Transcript::zeros(p);
    for i in 0..p.rounds() {
        t.round_mut(i).fill_random(rng);
    }
    p.evaluate(&t)
}

/// Runs one execution with the given coalition strategy. Good bits are drawn
/// uniformly; in each round the responder sees the same-round good bits
/// before the coalition's bits are fixed.
pub fn run_with_adversary(
    p: &ProtocolSpec,
    adv: &AdversaryStrategy,
    rng: &mut impl RngCore,
) -> Result<Outcome> {
    p.check_coalition(&adv.coalition)?;
    let bad_count = adv.coalition.len() as u32;
    let mut t = Transcript::zeros(p);
    for i in 0..p.rounds() {
        let r = p.bits_per_round()[i];
        if bad_count * r > 64 {
            return Err(ProtocolError::ShapeMismatch(format!(
                "strategy responder packs {} bits into a word",
                bad_count * r
            )));
        }
        t.round_mut(i).fill_random(rng);
        // zero the coalition's positions before the responder looks
        for player in adv.coalition.iter() {
            t.round_mut(i).write_bits((player - 1) * r, r, 0);
        }
        let packed = (adv.responder)(i, &t);
        for (j, player) in adv.coalition.iter().enumerate() {
            let bits = (packed >> (j as u32 * r)) & if r == 64 { !0 } else { (1u64 << r) - 1 };
            t.round_mut(i).write_bits((player - 1) * r, r, bits);
        }
    }
    Ok(p.evaluate(&t))
}

/// Monte Carlo estimate with a two-sided Hoeffding interval.
#[derive(Debug, Clone, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub ci_halfwidth: f64,
    pub trials: u64,
    pub hits: u64,
}

/// Estimates `Pr[target]` over `trials` independent executions. Trial `t`
/// uses the ChaCha8 stream `(seed, t)`, so trials are reproducible and
/// order-independent.
pub fn monte_carlo_value(
    p: &ProtocolSpec,
    adv: Option<&AdversaryStrategy>,
    target: &OutcomeTarget,
    trials: u64,
    seed: u64,
) -> Result<McEstimate> {
    if trials == 0 {
        return Err(ProtocolError::Invalid("trials must be >= 1".into()));
    }
    let mut hits = 0u64;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial);
        let outcome = match adv {
            Some(a) => run_with_adversary(p, a, &mut rng)?,
            None => honest_run(p, &mut rng),
        };
        if target.matches(&outcome) {
            hits += 1;
        }
    }
    Ok(McEstimate {
        estimate: hits as f64 / trials as f64,
        ci_halfwidth: stats::hoeffding_halfwidth(trials, MC_CONFIDENCE)?,
        trials,
        hits,
    })
}

// ---- exact optimal-adversary machinery ----

struct ExactCtx<'a> {
    p: &'a ProtocolSpec,
    target: &'a OutcomeTarget,
    // per round: bit positions owned by good / bad players
    good_pos: Vec<Vec<u32>>,
    bad_pos: Vec<Vec<u32>>,
}

impl<'a> ExactCtx<'a> {
    fn new(p: &'a ProtocolSpec, coalition: &CoordSet, target: &'a OutcomeTarget) -> ExactCtx<'a> {
        let mut good_pos = Vec::with_capacity(p.rounds());
        let mut bad_pos = Vec::with_capacity(p.rounds());
        for i in 0..p.rounds() {
            let r = p.bits_per_round()[i];
            let mut good = Vec::new();
            let mut bad = Vec::new();
            for player in 1..=p.players() {
                let dst = if coalition.contains(player) {
                    &mut bad
                } else {
                    &mut good
                };
                for j in 0..r {
                    dst.push((player - 1) * r + j);
                }
            }
            good_pos.push(good);
            bad_pos.push(bad);
        }
        ExactCtx {
            p,
            target,
            good_pos,
            bad_pos,
        }
    }

    fn deposit(positions: &[u32], pattern: u64) -> u64 {
        let mut word = 0u64;
        for (j, &pos) in positions.iter().enumerate() {
            if (pattern >> j) & 1 == 1 {
                word |= 1u64 << pos;
            }
        }
        word
    }

    /// Value of the subtree at `round` given the earlier round words:
    /// average over good patterns, maximum over bad patterns.
    fn value(&self, round: usize, words: &mut Vec<u64>) -> Dyadic {
        if round == self.p.rounds() {
            let t = Transcript::from_round_words(self.p, words);
            return if self.target.matches(&self.p.evaluate(&t)) {
                Dyadic::ONE
            } else {
                Dyadic::ZERO
            };
        }
        let g = self.good_pos[round].len() as u32;
        let b = self.bad_pos[round].len() as u32;
        let mut sum = Dyadic::ZERO;
        for gp in 0..(1u64 << g) {
            let good_word = Self::deposit(&self.good_pos[round], gp);
            let mut best = Dyadic::ZERO;
            let mut first = true;
            for bp in 0..(1u64 << b) {
                words.push(good_word | Self::deposit(&self.bad_pos[round], bp));
                let v = self.value(round + 1, words);
                words.pop();
                if first || v > best {
                    best = v;
                    first = false;
                }
            }
            sum = sum.add(&best);
        }
        sum.div_pow2(g)
    }
}

/// Exact `max_sigma Pr[outcome matches target]` for the given coalition, by
/// backward induction (good bits averaged, bad bits maximized per round).
pub fn exact_adversary_value(
    p: &ProtocolSpec,
    coalition: &CoordSet,
    target: &OutcomeTarget,
) -> Result<Dyadic> {
    p.check_exact_budget()?;
    p.check_coalition(coalition)?;
    let ctx = ExactCtx::new(p, coalition, target);
    let mut words = Vec::with_capacity(p.rounds());
    Ok(ctx.value(0, &mut words))
}

/// Exact honest probability of the target (empty coalition).
pub fn exact_honest_value(p: &ProtocolSpec, target: &OutcomeTarget) -> Result<Dyadic> {
    exact_adversary_value(p, &CoordSet::empty(), target)
}

/// Shared memo of subtree values, keyed by (round, earlier round words).
struct ValueMemo<'a> {
    ctx: ExactCtx<'a>,
    memo: HashMap<(usize, Vec<u64>), Dyadic>,
}

impl<'a> ValueMemo<'a> {
    fn new(ctx: ExactCtx<'a>) -> ValueMemo<'a> {
        ValueMemo {
            ctx,
            memo: HashMap::new(),
        }
    }

    fn value(&mut self, round: usize, words: &mut Vec<u64>) -> Dyadic {
        if round == self.ctx.p.rounds() {
            let t = Transcript::from_round_words(self.ctx.p, words);
            return if self.ctx.target.matches(&self.ctx.p.evaluate(&t)) {
                Dyadic::ONE
            } else {
                Dyadic::ZERO
            };
        }
        if let Some(v) = self.memo.get(&(round, words.clone())) {
            return *v;
        }
        let g = self.ctx.good_pos[round].len() as u32;
        let b = self.ctx.bad_pos[round].len() as u32;
        let mut sum = Dyadic::ZERO;
        for gp in 0..(1u64 << g) {
            let good_word = ExactCtx::deposit(&self.ctx.good_pos[round], gp);
            let mut best = Dyadic::ZERO;
            let mut first = true;
            for bp in 0..(1u64 << b) {
                words.push(good_word | ExactCtx::deposit(&self.ctx.bad_pos[round], bp));
                let v = self.value(round + 1, words);
                words.pop();
                if first || v > best {
                    best = v;
                    first = false;
                }
            }
            sum = sum.add(&best);
        }
        let out = sum.div_pow2(g);
        self.memo.insert((round, words.clone()), out);
        out
    }

    /// Canonical optimal response: the lexicographically smallest bad pattern
    /// maximizing the continuation value, deposited into round positions.
    fn canonical_response(&mut self, round: usize, words: &mut Vec<u64>, good_word: u64) -> u64 {
        let b = self.ctx.bad_pos[round].len() as u32;
        let mut best = Dyadic::ZERO;
        let mut best_word = 0u64;
        let mut first = true;
        for bp in 0..(1u64 << b) {
            let bad_word = ExactCtx::deposit(&self.ctx.bad_pos[round], bp);
            words.push(good_word | bad_word);
            let v = self.value(round + 1, words);
            words.pop();
            if first || v > best {
                best = v;
                best_word = bad_word;
                first = false;
            }
        }
        best_word
    }
}

/// Enumerates every assignment of the good players' bits and the transcript
/// realized when the coalition plays the canonical (lex-smallest maximizing)
/// optimal strategy for `target`. The visitor receives the full round words.
pub fn for_each_optimal_play(
    p: &ProtocolSpec,
    coalition: &CoordSet,
    target: &OutcomeTarget,
    mut visitor: impl FnMut(&[u64]),
) -> Result<()> {
    p.check_exact_budget()?;
    p.check_coalition(coalition)?;
    let ctx = ExactCtx::new(p, coalition, target);
    let mut vm = ValueMemo::new(ctx);
    let mut words = Vec::with_capacity(p.rounds());
    walk_plays(&mut vm, 0, &mut words, &mut visitor);
    Ok(())
}

fn walk_plays(
    vm: &mut ValueMemo<'_>,
    round: usize,
    words: &mut Vec<u64>,
    visitor: &mut impl FnMut(&[u64]),
) {
    if round == vm.ctx.p.rounds() {
        visitor(words);
        return;
    }
    let g = vm.ctx.good_pos[round].len() as u32;
    for gp in 0..(1u64 << g) {
        let good_word = ExactCtx::deposit(&vm.ctx.good_pos[round], gp);
        let bad_word = vm.canonical_response(round, words, good_word);
        words.push(good_word | bad_word);
        walk_plays(vm, round + 1, words, visitor);
        words.pop();
    }
}

/// Protocol with the coalition's canonical optimal strategy for `target`
/// baked into the evaluator: the coalition's transcript bits are ignored and
/// replaced by the strategy's responses to the good bits. Honest runs of the
/// result behave like `p` under that fixed adversary.
pub fn restrict_protocol(
    p: &ProtocolSpec,
    coalition: &CoordSet,
    target: &OutcomeTarget,
) -> Result<ProtocolSpec> {
    p.check_exact_budget()?;
    p.check_coalition(coalition)?;
    let inner = p.clone();
    let coalition = coalition.clone();
    let target = target.clone();
    // Strategy responses memoized across evaluator calls.
    let cache: Mutex<HashMap<Vec<u64>, u64>> = Mutex::new(HashMap::new());
    let name = format!("{}|restricted", p.name());
    let rounds = p.rounds();
    let players = p.players();
    let bits = p.bits_per_round().to_vec();
    let domain = p.domain();
    let evaluator = move |t: &Transcript| -> Outcome {
        let ctx = ExactCtx::new(&inner, &coalition, &target);
        let mut vm = ValueMemo::new(ctx);
        let mut words: Vec<u64> = Vec::with_capacity(rounds);
        for i in 0..rounds {
            // good bits from the incoming transcript, coalition bits zeroed
            let mut good_word = 0u64;
            for &pos in &vm.ctx.good_pos[i] {
                if t.round(i).get(pos) {
                    good_word |= 1u64 << pos;
                }
            }
            let mut key = words.clone();
            key.push(good_word);
            key.push(i as u64);
            let bad_word = {
                let cached = cache.lock().unwrap().get(&key).copied();
                match cached {
                    Some(w) => w,
                    None => {
                        let w = vm.canonical_response(i, &mut words, good_word);
                        cache.lock().unwrap().insert(key, w);
                        w
                    }
                }
            };
            words.push(good_word | bad_word);
        }
        inner.evaluate(&Transcript::from_round_words(&inner, &words))
    };
    ProtocolSpec::new(name, players, bits, domain, evaluator)
}

/// Truth table of the round-`k` function induced by a fixed prefix of rounds
/// `1..k-1` (COIN domain). Bit layout: player 1's round-`k` bits are least
/// significant, then player 2, and so on.
pub fn induced_round_function(p: &ProtocolSpec, prefix: &[u64]) -> Result<BooleanFunction> {
    p.expect_domain(OutcomeDomain::Coin)?;
    let k = p.rounds();
    if prefix.len() != k - 1 {
        return Err(ProtocolError::ShapeMismatch(format!(
            "prefix has {} rounds, protocol needs {}",
            prefix.len(),
            k - 1
        )));
    }
    let arity = p.round_bits(k - 1);
    if arity > MAX_ARITY {
        return Err(ProtocolError::BudgetExceeded {
            needed: arity,
            budget: MAX_ARITY,
        });
    }
    let mut words: Vec<u64> = prefix.to_vec();
    words.push(0);
    BooleanFunction::from_fn(arity, |x| {
        let mut w = words.clone();
        w[k - 1] = x as u64;
        match p.evaluate(&Transcript::from_round_words(p, &w)) {
            Outcome::Coin(b) => b,
            Outcome::Leader(_) => unreachable!("domain checked"),
        }
    })
    .map_err(Into::into)
}

/// Flat truth table of a COIN protocol over all its transcript bits, rounds
/// concatenated with round 1 least significant.
pub fn truth_table(p: &ProtocolSpec) -> Result<BooleanFunction> {
    p.expect_domain(OutcomeDomain::Coin)?;
    let arity = p.total_bits();
    if arity > MAX_ARITY {
        return Err(ProtocolError::BudgetExceeded {
            needed: arity,
            budget: MAX_ARITY,
        });
    }
    BooleanFunction::from_fn(arity, |z| {
        let mut words = Vec::with_capacity(p.rounds());
        let mut rest = z as u64;
        for i in 0..p.rounds() {
            let rb = p.round_bits(i);
            words.push(rest & ((1u64 << rb) - 1));
            rest >>= rb;
        }
        match p.evaluate(&Transcript::from_round_words(p, &words)) {
            Outcome::Coin(b) => b,
            Outcome::Leader(_) => unreachable!("domain checked"),
        }
    })
    .map_err(Into::into)
}

/// Leader-to-coin reduction: runs the leader protocol for `k` rounds, then in
/// round `k+1` outputs the first bit of the elected player's message. The
/// extra round reuses the round-`k` bit width.
pub fn leader_to_coinflip(p: &ProtocolSpec) -> Result<ProtocolSpec> {
    p.expect_domain(OutcomeDomain::Leader)?;
    let inner = p.clone();
    let k = p.rounds();
    let r_last = *p.bits_per_round().last().expect("k >= 1");
    let mut bits = p.bits_per_round().to_vec();
    bits.push(r_last);
    ProtocolSpec::new(
        format!("{}+coin", p.name()),
        p.players(),
        bits,
        OutcomeDomain::Coin,
        move |t: &Transcript| {
            let prefix = Transcript {
                rounds: (0..k).map(|i| t.round(i).clone()).collect(),
            };
            match inner.evaluate(&prefix) {
                Outcome::Leader(leader) => Outcome::Coin(t.round(k).get((leader - 1) * r_last)),
                Outcome::Coin(_) => unreachable!("domain checked"),
            }
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EvalMode {
    Exact,
    Mc,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResilienceReport {
    pub resilient: bool,
    pub worst_coalition: CoordSet,
    pub worst_target: String,
    pub value: f64,
    pub exact_value: Option<Dyadic>,
    pub mode: EvalMode,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
}

const EXACT_COALITION_CAP: u64 = 200_000;

fn coalition_count(players: u32, b: usize) -> u64 {
    let mut c = 1u64;
    for j in 0..b as u64 {
        c = c.saturating_mul(players as u64 - j) / (j + 1);
    }
    c
}

fn targets_for(p: &ProtocolSpec, coalition: &CoordSet) -> Vec<OutcomeTarget> {
    match p.domain() {
        OutcomeDomain::Coin => {
            vec![OutcomeTarget::Coin(false), OutcomeTarget::Coin(true)]
        }
        OutcomeDomain::Leader => vec![OutcomeTarget::LeaderIn(coalition.clone())],
    }
}

/// Checks `(b, gamma)`-resilience: for COIN, no coalition of size <= b pushes
/// any outcome above `1-gamma`; for LEADER, no such coalition makes
/// `Pr[leader in B] > 1-gamma`.
///
/// EXACT mode enumerates all size-`b` coalitions with backward induction.
/// MC mode estimates a heuristic greedy adversary per sampled coalition and
/// can only certify *non*-resilience; it is reported as a lower bound.
pub fn resilience_check(
    p: &ProtocolSpec,
    b: usize,
    gamma: f64,
    mode: EvalMode,
    mc_trials: u64,
    seed: u64,
) -> Result<ResilienceReport> {
    if b as u32 > p.players() {
        return Err(ProtocolError::Invalid(format!(
            "coalition budget {b} exceeds {} players",
            p.players()
        )));
    }
    match mode {
        EvalMode::Exact => {
            p.check_exact_budget()?;
            let count = coalition_count(p.players(), b);
            if count > EXACT_COALITION_CAP {
                return Err(ProtocolError::Capacity(format!(
                    "exact resilience needs {count} coalitions, cap is {EXACT_COALITION_CAP}"
                )));
            }
            let mut worst_value = Dyadic::ZERO;
            let mut worst_coalition = CoordSet::empty();
            let mut worst_target = String::new();
            let mut first = true;
            for combo in (1..=p.players()).combinations(b) {
                let coalition = CoordSet::from_sorted(combo)?;
                for target in targets_for(p, &coalition) {
                    let v = exact_adversary_value(p, &coalition, &target)?;
                    if first || v > worst_value {
                        worst_value = v;
                        worst_coalition = coalition.clone();
                        worst_target = target.label();
                        first = false;
                    }
                }
            }
            Ok(ResilienceReport {
                resilient: !worst_value.at_least(1.0 - gamma)
                    || worst_value.to_f64() == 1.0 - gamma,
                worst_coalition,
                worst_target,
                value: worst_value.to_f64(),
                exact_value: Some(worst_value),
                mode,
                trials: None,
                seed: None,
            })
        }
        EvalMode::Mc => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let count = coalition_count(p.players(), b);
            let coalitions: Vec<CoordSet> = if count <= 64 {
                (1..=p.players())
                    .combinations(b)
                    .map(|c| CoordSet::from_sorted(c).expect("sorted"))
                    .collect()
            } else {
                (0..64)
                    .map(|_| {
                        let mut picks: Vec<u32> = Vec::new();
                        while picks.len() < b {
                            let cand = rng.random_range(1..=p.players());
                            if !picks.contains(&cand) {
                                picks.push(cand);
                            }
                        }
                        picks.sort_unstable();
                        CoordSet::from_sorted(picks).expect("sorted")
                    })
                    .collect()
            };
            let mut worst_value = -1.0f64;
            let mut worst_coalition = CoordSet::empty();
            let mut worst_target = String::new();
            for coalition in coalitions {
                for target in targets_for(p, &coalition) {
                    let adv = greedy_rollout_adversary(p, coalition.clone(), target.clone(), seed)?;
                    let est = monte_carlo_value(p, Some(&adv), &target, mc_trials, seed)?;
                    if est.estimate > worst_value {
                        worst_value = est.estimate;
                        worst_coalition = coalition.clone();
                        worst_target = target.label();
                    }
                }
            }
            Ok(ResilienceReport {
                resilient: worst_value <= 1.0 - gamma,
                worst_coalition,
                worst_target,
                value: worst_value,
                exact_value: None,
                mode,
                trials: Some(mc_trials),
                seed: Some(seed),
            })
        }
    }
}

const GREEDY_ROLLOUTS: u64 = 32;
const GREEDY_RESPONSE_CAP: u32 = 10;

/// Heuristic adversary for Monte Carlo paths: per round, tries every joint
/// coalition response (capped at 2^10) and keeps the one whose continuation,
/// estimated by a few honest rollouts, best serves the target.
pub fn greedy_rollout_adversary(
    p: &ProtocolSpec,
    coalition: CoordSet,
    target: OutcomeTarget,
    seed: u64,
) -> Result<AdversaryStrategy> {
    let bad_players = coalition.len() as u32;
    let spec = p.clone();
    let coal = coalition.clone();
    Ok(AdversaryStrategy::new(coalition, move |round, t| {
        let r = spec.bits_per_round()[round];
        let bits = bad_players * r;
        if bits > GREEDY_RESPONSE_CAP {
            return 0; // too many joint responses to scan; play zeros
        }
        let mut best = (0u64, -1.0f64);
        for packed in 0..(1u64 << bits) {
            let mut hits = 0u64;
            for rollout in 0..GREEDY_ROLLOUTS {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
                rng.set_stream((round as u64) << 32 | rollout);
                let mut sim = t.clone();
                for (j, player) in coal.iter().enumerate() {
                    let v = (packed >> (j as u32 * r)) & ((1u64 << r) - 1);
                    sim.round_mut(round).write_bits((player - 1) * r, r, v);
                }
                // future rounds: honest draw for everyone (rough estimate)
                for i in round + 1..spec.rounds() {
                    sim.round_mut(i).fill_random(&mut rng);
                }
                if target.matches(&spec.evaluate(&sim)) {
                    hits += 1;
                }
            }
            let score = hits as f64;
            if score > best.1 {
                best = (packed, score);
            }
        }
        best.0
    }))
}

// ---- builtin protocol constructors ----

/// One-round COIN protocol applying a boolean function to the round word.
pub fn one_round_fn(f: BooleanFunction) -> Result<ProtocolSpec> {
    let players = f.arity();
    ProtocolSpec::new(
        format!("one-round-fn[{players}]"),
        players,
        vec![1],
        OutcomeDomain::Coin,
        move |t: &Transcript| Outcome::Coin(f.get(t.round(0).as_word() as u32)),
    )
}

/// One-round COIN protocol with `r` bits per player, applying a function of
/// arity `players * r` to the round word.
pub fn one_round_fn_multibit(f: BooleanFunction, players: u32, r: u32) -> Result<ProtocolSpec> {
    if players * r != f.arity() {
        return Err(ProtocolError::Invalid(format!(
            "function arity {} != players {players} * bits {r}",
            f.arity()
        )));
    }
    ProtocolSpec::new(
        format!("one-round-fn[{players}x{r}]"),
        players,
        vec![r],
        OutcomeDomain::Coin,
        move |t: &Transcript| Outcome::Coin(f.get(t.round(0).as_word() as u32)),
    )
}

/// k-round parity of every transcript bit.
pub fn parity_rounds(players: u32, bits: Vec<u32>) -> Result<ProtocolSpec> {
    let k = bits.len();
    ProtocolSpec::new(
        format!("parity-rounds[{players}x{k}]"),
        players,
        bits,
        OutcomeDomain::Coin,
        move |t: &Transcript| {
            let mut acc = 0u32;
            for i in 0..t.rounds() {
                for w in &t.round(i).words {
                    acc ^= w.count_ones() & 1;
                }
            }
            Outcome::Coin(acc & 1 == 1)
        },
    )
}

/// Two-round selection: the round-1 word mod `players` picks a player whose
/// round-2 bit is the output.
pub fn select_then_vote(players: u32) -> Result<ProtocolSpec> {
    ProtocolSpec::new(
        format!("select-then-vote[{players}]"),
        players,
        vec![1, 1],
        OutcomeDomain::Coin,
        move |t: &Transcript| {
            let sel = (t.round(0).as_word() % players as u64) as u32 + 1;
            Outcome::Coin(t.round(1).get(sel - 1))
        },
    )
}

/// Two-round half selection: round-1 majority (ties to the first half) picks
/// a half of the players; output is the majority of that half's round-2 bits
/// (ties to 1).
pub fn half_majority(players: u32) -> Result<ProtocolSpec> {
    if !players.is_multiple_of(2) {
        return Err(ProtocolError::Invalid(
            "half-majority needs an even player count".into(),
        ));
    }
    ProtocolSpec::new(
        format!("half-majority[{players}]"),
        players,
        vec![1, 1],
        OutcomeDomain::Coin,
        move |t: &Transcript| {
            let ones: u32 = t.round(0).words.iter().map(|w| w.count_ones()).sum();
            let first_half = ones * 2 < players;
            let half = players / 2;
            let offset = if first_half { 0 } else { half };
            let votes = (0..half).filter(|&j| t.round(1).get(offset + j)).count() as u32;
            Outcome::Coin(votes * 2 >= half)
        },
    )
}

/// Two-round XOR composition: `tribes(tribe_count, width)` on the round-2
/// bits XOR the parity of the round-1 bits.
pub fn xor_tribes(players: u32, tribe_count: u32, width: u32) -> Result<ProtocolSpec> {
    if tribe_count * width != players {
        return Err(ProtocolError::Invalid(format!(
            "tribes {tribe_count}x{width} does not cover {players} players"
        )));
    }
    let tribes = BooleanFunction::tribes(tribe_count, width)?;
    ProtocolSpec::new(
        format!("xor-tribes[{tribe_count}x{width}]"),
        players,
        vec![1, 1],
        OutcomeDomain::Coin,
        move |t: &Transcript| {
            let parity1 = t.round(0).words.iter().map(|w| w.count_ones()).sum::<u32>() & 1 == 1;
            let tr = tribes.get(t.round(1).as_word() as u32);
            Outcome::Coin(tr ^ parity1)
        },
    )
}

/// One-round leader election: the round word mod `players`, plus one.
pub fn leader_mod(players: u32, r: u32) -> Result<ProtocolSpec> {
    ProtocolSpec::new(
        format!("leader-mod[{players}]"),
        players,
        vec![r],
        OutcomeDomain::Leader,
        move |t: &Transcript| Outcome::Leader((t.round(0).as_word() % players as u64) as u32 + 1),
    )
}

/// One-round constant leader.
pub fn leader_const(players: u32, leader: u32) -> Result<ProtocolSpec> {
    if leader == 0 || leader > players {
        return Err(ProtocolError::Invalid(format!(
            "leader {leader} out of range"
        )));
    }
    ProtocolSpec::new(
        format!("leader-const[{leader}]"),
        players,
        vec![1],
        OutcomeDomain::Leader,
        move |_| Outcome::Leader(leader),
    )
}
