//! 3SAT instances: representation, DIMACS I/O, planted-solution generation
//! and exhaustive solution counting.
//!
//! Basis convention used throughout the crate: bit `n - 1` of a state index
//! holds variable `x_n`, with 1 meaning TRUE.

use std::fmt;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};

/// Clause-to-variable ratio at the random 3SAT satisfiability threshold.
pub const SAT_THRESHOLD_RATIO: f64 = 4.267;
/// Default hiding parameter.
pub const DEFAULT_P0: f64 = 0.08;
/// Largest variable count accepted by [`count_solutions`].
pub const MAX_ENUMERATION_VARS: usize = 30;
/// Default attempt cap of [`filter_by_solution_count`].
pub const DEFAULT_MAX_ATTEMPTS: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Literal {
    /// 1-based variable index.
    pub var: usize,
    pub negated: bool,
}

impl Literal {
    pub fn new(var: usize, negated: bool) -> Result<Self> {
        if var == 0 {
            return Err(Error::InvalidParams("variable indices start at 1".into()));
        }
        Ok(Literal { var, negated })
    }

    fn from_dimacs(x: i64) -> Self {
        Literal {
            var: x.unsigned_abs() as usize,
            negated: x < 0,
        }
    }

    fn to_dimacs(self) -> i64 {
        if self.negated {
            -(self.var as i64)
        } else {
            self.var as i64
        }
    }

    #[inline]
    pub fn is_true_in(&self, state: u64) -> bool {
        (((state >> (self.var - 1)) & 1) == 1) != self.negated
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Clause {
    literals: [Literal; 3],
}

impl Clause {
    pub fn new(literals: [Literal; 3]) -> Result<Self> {
        let [a, b, c] = literals;
        if a.var == 0 || b.var == 0 || c.var == 0 {
            return Err(Error::InvalidParams("variable indices start at 1".into()));
        }
        if a.var == b.var || a.var == c.var || b.var == c.var {
            return Err(Error::NotThreeSat { clause: 0 });
        }
        Ok(Clause { literals })
    }

    pub fn literals(&self) -> &[Literal; 3] {
        &self.literals
    }

    /// `(mask, pattern)` such that a state violates the clause iff
    /// `state & mask == pattern`.
    #[inline]
    pub fn violation_mask(&self) -> (u64, u64) {
        let mut mask = 0u64;
        let mut pattern = 0u64;
        for l in &self.literals {
            let bit = 1u64 << (l.var - 1);
            mask |= bit;
            if l.negated {
                pattern |= bit;
            }
        }
        (mask, pattern)
    }

    #[inline]
    pub fn is_violated_by(&self, state: u64) -> bool {
        let (mask, pattern) = self.violation_mask();
        state & mask == pattern
    }

    /// 0-based qubit indices of the three variables.
    pub fn qubits(&self) -> [usize; 3] {
        self.literals.map(|l| l.var - 1)
    }
}

/// Truth assignment for `len` variables packed into a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    bits: u64,
    len: usize,
}

impl Assignment {
    pub fn from_bits(bits: u64, len: usize) -> Result<Self> {
        if len > 64 || (len < 64 && bits >> len != 0) {
            return Err(Error::InvalidParams(format!(
                "bitmask {bits:#x} does not fit {len} variables"
            )));
        }
        Ok(Assignment { bits, len })
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Value of the 1-based variable `var`.
    pub fn value(&self, var: usize) -> bool {
        (self.bits >> (var - 1)) & 1 == 1
    }

    /// Character `k` holds `x_{k+1}`.
    pub fn to_bitstring(&self) -> String {
        (0..self.len)
            .map(|k| if (self.bits >> k) & 1 == 1 { '1' } else { '0' })
            .collect()
    }

    pub fn from_bitstring(s: &str) -> Result<Self> {
        let mut bits = 0u64;
        for (k, ch) in s.chars().enumerate() {
            match ch {
                '1' if k < 64 => bits |= 1 << k,
                '0' => {}
                _ => {
                    return Err(Error::InvalidParams(format!("bad bitstring {s:?}")));
                }
            }
        }
        Assignment::from_bits(bits, s.chars().count())
    }

    pub fn satisfies(&self, clause: &Clause) -> bool {
        !clause.is_violated_by(self.bits)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SatInstance {
    num_vars: usize,
    clauses: Vec<Clause>,
    planted: Option<Assignment>,
}

impl SatInstance {
    pub fn new(num_vars: usize, clauses: Vec<Clause>, planted: Option<Assignment>) -> Result<Self> {
        if num_vars > 64 {
            return Err(Error::DimensionOverflow { n: num_vars, max: 64 });
        }
        for (m, c) in clauses.iter().enumerate() {
            if c.literals.iter().any(|l| l.var > num_vars) {
                return Err(Error::InvalidParams(format!(
                    "clause {m} references a variable beyond N = {num_vars}"
                )));
            }
        }
        if let Some(p) = &planted {
            if p.len != num_vars {
                return Err(Error::ShapeMismatch {
                    expected: num_vars,
                    found: p.len,
                });
            }
            if let Some(m) = clauses.iter().position(|c| !p.satisfies(c)) {
                return Err(Error::InvalidParams(format!(
                    "planted assignment violates clause {m}"
                )));
            }
        }
        Ok(SatInstance {
            num_vars,
            clauses,
            planted,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn planted(&self) -> Option<&Assignment> {
        self.planted.as_ref()
    }

    pub fn with_planted(mut self, planted: Option<Assignment>) -> Result<Self> {
        let clauses = std::mem::take(&mut self.clauses);
        SatInstance::new(self.num_vars, clauses, planted)
    }

    /// Number of clauses violated by the basis state `state`.
    pub fn violations_of_state(&self, state: u64) -> usize {
        self.clauses.iter().filter(|c| c.is_violated_by(state)).count()
    }

    /// Violation count of every basis state; this is the diagonal of the
    /// clause-penalty Hamiltonian.
    pub fn violation_table(&self) -> Result<Vec<u32>> {
        if self.num_vars > MAX_ENUMERATION_VARS {
            return Err(Error::TooLarge {
                n: self.num_vars,
                max: MAX_ENUMERATION_VARS,
            });
        }
        let dim = 1usize << self.num_vars;
        let mut table = vec![0u32; dim];
        for c in &self.clauses {
            for_each_violating_state(c, self.num_vars, |s| table[s] += 1);
        }
        Ok(table)
    }
}

/// Calls `f` on every state of an `n`-variable system that violates `clause`,
/// in increasing order.
pub fn for_each_violating_state(clause: &Clause, n: usize, mut f: impl FnMut(usize)) {
    let (mask, pattern) = clause.violation_mask();
    let full = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let free = full & !mask;
    // Walk the submasks of `free` in increasing order.
    let mut sub = 0u64;
    loop {
        f((sub | pattern) as usize);
        if sub == free {
            break;
        }
        sub = (sub.wrapping_sub(free)) & free;
    }
}

/// Parses DIMACS CNF text. A `c planted <bitstring>` comment restores the
/// planted assignment.
pub fn parse_dimacs(text: &str) -> Result<SatInstance> {
    let mut header: Option<(usize, usize)> = None;
    let mut planted: Option<Assignment> = None;
    let mut clauses = Vec::new();
    let mut pending: Vec<i64> = Vec::new();
    let mut last_line = 0;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = lineno + 1;
        last_line = lineno;
        if line.is_empty() {
            continue;
        }
        if line.starts_with('%') {
            break;
        }
        if let Some(rest) = line.strip_prefix('c') {
            if rest.is_empty() || rest.starts_with(char::is_whitespace) {
                let mut words = rest.split_whitespace();
                if words.next() == Some("planted") {
                    let bits = words.next().ok_or_else(|| Error::Syntax {
                        line: lineno,
                        msg: "planted comment without bitstring".into(),
                    })?;
                    planted = Some(Assignment::from_bitstring(bits).map_err(|_| Error::Syntax {
                        line: lineno,
                        msg: format!("bad planted bitstring {bits:?}"),
                    })?);
                }
                continue;
            }
        }
        if line.starts_with('p') {
            if header.is_some() {
                return Err(Error::Syntax {
                    line: lineno,
                    msg: "duplicate problem line".into(),
                });
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            if words.len() != 4 || words[0] != "p" || words[1] != "cnf" {
                return Err(Error::Syntax {
                    line: lineno,
                    msg: format!("expected `p cnf <vars> <clauses>`, got {line:?}"),
                });
            }
            let parse = |w: &str| {
                w.parse::<usize>().map_err(|_| Error::Syntax {
                    line: lineno,
                    msg: format!("bad count {w:?}"),
                })
            };
            header = Some((parse(words[2])?, parse(words[3])?));
            continue;
        }
        let Some((n, _)) = header else {
            return Err(Error::Syntax {
                line: lineno,
                msg: "clause before problem line".into(),
            });
        };
        for tok in line.split_whitespace() {
            let x: i64 = tok.parse().map_err(|_| Error::Syntax {
                line: lineno,
                msg: format!("bad literal {tok:?}"),
            })?;
            if x == 0 {
                let idx = clauses.len();
                if pending.len() != 3 {
                    return Err(Error::NotThreeSat { clause: idx });
                }
                let lits = [0, 1, 2].map(|k| Literal::from_dimacs(pending[k]));
                if lits.iter().any(|l| l.var > n) {
                    return Err(Error::Syntax {
                        line: lineno,
                        msg: format!("literal exceeds declared variable count {n}"),
                    });
                }
                let clause = Clause::new(lits).map_err(|_| Error::NotThreeSat { clause: idx })?;
                clauses.push(clause);
                pending.clear();
            } else {
                pending.push(x);
            }
        }
    }

    let (n, m) = header.ok_or(Error::Syntax {
        line: last_line,
        msg: "missing problem line".into(),
    })?;
    if !pending.is_empty() {
        return Err(Error::Syntax {
            line: last_line,
            msg: "unterminated clause".into(),
        });
    }
    if clauses.len() != m {
        return Err(Error::Syntax {
            line: last_line,
            msg: format!("header declares {m} clauses, found {}", clauses.len()),
        });
    }
    SatInstance::new(n, clauses, planted)
}

/// Canonical DIMACS text; the planted assignment, if any, goes into a leading
/// comment line.
pub fn serialize_dimacs(inst: &SatInstance) -> String {
    let mut out = String::new();
    if let Some(p) = &inst.planted {
        out.push_str(&format!("c planted {}\n", p.to_bitstring()));
    }
    out.push_str(&format!("p cnf {} {}\n", inst.num_vars, inst.clauses.len()));
    for c in &inst.clauses {
        let [a, b, d] = c.literals.map(Literal::to_dimacs);
        out.push_str(&format!("{a} {b} {d} 0\n"));
    }
    out
}

impl fmt::Display for SatInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_dimacs(self))
    }
}

/// How clause sign patterns are drawn relative to the planted assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HidingScheme {
    /// Per-pattern weights `(1+2p0)/6`, `(1-4p0)/6`, `p0` for one, two and
    /// three satisfied literals. Every literal is true under the planted
    /// assignment with probability 1/2, so the solution leaves no local bias.
    /// Valid for `0 <= p0 <= 1/4`.
    #[default]
    Balanced,
    /// Per-pattern weight `p0` for one and two satisfied literals and
    /// `1 - 6 p0` for three. Valid for `0 <= p0 <= 1/6`.
    Symmetric,
}

impl HidingScheme {
    /// Total probability of drawing a clause with `k = 1, 2, 3` satisfied
    /// literals.
    pub fn class_probabilities(self, p0: f64) -> Result<[f64; 3]> {
        let (probs, upper) = match self {
            HidingScheme::Balanced => (
                [(1.0 + 2.0 * p0) / 2.0, (1.0 - 4.0 * p0) / 2.0, p0],
                0.25,
            ),
            HidingScheme::Symmetric => ([3.0 * p0, 3.0 * p0, 1.0 - 6.0 * p0], 1.0 / 6.0),
        };
        if !(0.0..=upper).contains(&p0) || probs.iter().any(|p| *p < 0.0) {
            return Err(Error::InvalidParams(format!(
                "p0 = {p0} outside [0, {upper:.4}] for the {self:?} scheme"
            )));
        }
        Ok(probs)
    }
}

impl std::str::FromStr for HidingScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(HidingScheme::Balanced),
            "symmetric" => Ok(HidingScheme::Symmetric),
            _ => Err(Error::InvalidParams(format!("unknown hiding scheme {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedParams {
    pub n_vars: usize,
    pub ratio: f64,
    pub p0: f64,
    #[serde(default)]
    pub scheme: HidingScheme,
}

impl PlantedParams {
    pub fn new(n_vars: usize) -> Self {
        PlantedParams {
            n_vars,
            ratio: SAT_THRESHOLD_RATIO,
            p0: DEFAULT_P0,
            scheme: HidingScheme::default(),
        }
    }

    pub fn num_clauses(&self) -> usize {
        (self.ratio * self.n_vars as f64).round() as usize
    }
}

/// Random instance with `round(ratio * n_vars)` clauses that the recorded
/// planted assignment satisfies, using the default hiding scheme.
pub fn generate_planted_instance(n_vars: usize, ratio: f64, p0: f64, seed: u64) -> Result<SatInstance> {
    generate_planted(
        &PlantedParams {
            n_vars,
            ratio,
            p0,
            scheme: HidingScheme::default(),
        },
        seed,
    )
}

pub fn generate_planted(params: &PlantedParams, seed: u64) -> Result<SatInstance> {
    let n = params.n_vars;
    if n < 3 {
        return Err(Error::InvalidParams(format!("need at least 3 variables, got {n}")));
    }
    if n > 64 {
        return Err(Error::DimensionOverflow { n, max: 64 });
    }
    if !(params.ratio > 0.0) || !params.ratio.is_finite() {
        return Err(Error::InvalidParams(format!("ratio must be positive, got {}", params.ratio)));
    }
    let [q1, q2, _] = params.scheme.class_probabilities(params.p0)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planted_bits = 0u64;
    for k in 0..n {
        if rng.random::<bool>() {
            planted_bits |= 1 << k;
        }
    }
    let planted = Assignment::from_bits(planted_bits, n)?;

    let m = params.num_clauses();
    let mut clauses = Vec::with_capacity(m);
    for _ in 0..m {
        let vars = index::sample(&mut rng, n, 3);
        let u: f64 = rng.random();
        let satisfied: [bool; 3] = if u < q1 {
            let which = rng.random_range(0..3);
            [which == 0, which == 1, which == 2]
        } else if u < q1 + q2 {
            let which = rng.random_range(0..3);
            [which != 0, which != 1, which != 2]
        } else {
            [true; 3]
        };
        let mut lits = [Literal { var: 1, negated: false }; 3];
        for (slot, (v, sat)) in lits.iter_mut().zip(vars.iter().zip(satisfied)) {
            let value = planted.value(v + 1);
            // A literal is true iff `value != negated`.
            *slot = Literal {
                var: v + 1,
                negated: value != sat,
            };
        }
        clauses.push(Clause::new(lits)?);
    }
    SatInstance::new(n, clauses, Some(planted))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolutionCount {
    /// Exact count, or `cap` if enumeration stopped early.
    pub count: u64,
    pub solutions: Vec<Assignment>,
    pub truncated: bool,
}

/// Exhaustive enumeration of satisfying assignments, stopping once `cap`
/// have been found.
pub fn count_solutions(inst: &SatInstance, cap: u64) -> Result<SolutionCount> {
    count_solutions_with(Execution::default(), inst, cap)
}

pub fn count_solutions_with(exec: Execution, inst: &SatInstance, cap: u64) -> Result<SolutionCount> {
    let n = inst.num_vars;
    if n > MAX_ENUMERATION_VARS {
        return Err(Error::TooLarge {
            n,
            max: MAX_ENUMERATION_VARS,
        });
    }
    let masks: Vec<(u64, u64)> = inst.clauses.iter().map(Clause::violation_mask).collect();
    let dim = 1u64 << n;
    let is_solution = |s: u64| masks.iter().all(|&(m, p)| s & m != p);

    // Small systems: one sequential sweep with early exit.
    const CHUNK: u64 = 1 << 14;
    let chunks: Vec<u64> = (0..dim.div_ceil(CHUNK)).collect();
    let scan = |c: &u64| {
        let mut found = Vec::new();
        for s in c * CHUNK..((c + 1) * CHUNK).min(dim) {
            if is_solution(s) {
                found.push(s);
                if found.len() as u64 >= cap {
                    break;
                }
            }
        }
        found
    };
    let mut all = Vec::new();
    if n < 18 {
        for c in &chunks {
            all.extend(scan(c));
            if all.len() as u64 >= cap {
                break;
            }
        }
    } else {
        for found in exec::map(exec, &chunks, scan) {
            all.extend(found);
            if all.len() as u64 >= cap {
                break;
            }
        }
    }
    let truncated = all.len() as u64 >= cap;
    all.truncate(cap as usize);
    let solutions = all
        .into_iter()
        .map(|s| Assignment::from_bits(s, n))
        .collect::<Result<Vec<_>>>()?;
    Ok(SolutionCount {
        count: solutions.len() as u64,
        solutions,
        truncated,
    })
}

/// Number of clauses with all three literals false under `a`.
pub fn violations(a: &Assignment, inst: &SatInstance) -> Result<usize> {
    if a.len != inst.num_vars {
        return Err(Error::ShapeMismatch {
            expected: inst.num_vars,
            found: a.len,
        });
    }
    Ok(inst.violations_of_state(a.bits))
}

#[derive(Debug, Clone)]
pub struct FilteredInstance {
    pub instance: SatInstance,
    pub seed: u64,
    pub attempts: u64,
    pub solutions: Vec<Assignment>,
}

/// Draws instances from `first_seed, first_seed + 1, ...` until one has
/// exactly `target` satisfying assignments.
pub fn filter_by_solution_count(
    params: &PlantedParams,
    target: u64,
    first_seed: u64,
    max_attempts: u64,
) -> Result<FilteredInstance> {
    if !(1..=2).contains(&target) {
        return Err(Error::InvalidParams(format!(
            "target solution count must be 1 or 2, got {target}"
        )));
    }
    for attempt in 0..max_attempts {
        let seed = first_seed.wrapping_add(attempt);
        let inst = generate_planted(params, seed)?;
        let count = count_solutions_with(Execution::Sequential, &inst, target + 1)?;
        if count.count == target {
            return Ok(FilteredInstance {
                instance: inst,
                seed,
                attempts: attempt + 1,
                solutions: count.solutions,
            });
        }
    }
    Err(Error::Exhausted {
        attempts: max_attempts,
    })
}
