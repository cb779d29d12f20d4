//! Procedural generator for small Raven-style problems with known rules.
//!
//! Rule semantics used here (this generator's own ground truth):
//!
//! * `Constant`: the attribute takes one value in all nine cells.
//! * `Progression(step)`: each row is `v, v + step, v + 2 step`; rows start independently.
//! * `Arithmetic(add)`: each row satisfies `v3 = v1 + v2` (or `v1 - v2`) with `v2 >= 1`.
//!   Only size and colour take this rule.
//! * `DistributeThree`: the rows are distinct cyclic shifts of one three-value set.
//!
//! Every distractor differs from the answer in at least one governed
//! attribute, so the rule oracle [`verify_rules`] accepts exactly one
//! candidate. Under [`DistractorPolicy::Balanced`] the eight candidates are all
//! combinations of original and altered values of three attributes, so the
//! answer is not recognisable from the candidate set alone.

mod render;

pub use render::{
    fill_intensity, has_variable_number, layout, render_cell, slot_count, Layout, COLOR_LEVELS, SIZE_LEVELS,
};

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::problem::{
    Attribute, CellAttrs, Configuration, RpmProblem, Rule, RuleAnnotation, RuleCategory, RuleEntry, RuleSystem,
    ShapeType, CANDIDATES,
};

/// How the seven distractors are derived from the answer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistractorPolicy {
    /// The 2x2x2 grid of original/altered values over three attributes.
    #[default]
    Balanced,
    /// Independent copies of the answer with `distractor_changes` attributes
    /// altered. The answer is then the centre of the candidate set.
    Perturb,
}

impl std::str::FromStr for DistractorPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "balanced" => Ok(Self::Balanced),
            "perturb" => Ok(Self::Perturb),
            _ => Err(Error::invalid(format!(
                "unknown distractor policy `{s}` (expected balanced or perturb)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub configurations: Vec<Configuration>,
    pub resolution: usize,
    pub min_non_constant: usize,
    pub max_non_constant: usize,
    pub distractor_policy: DistractorPolicy,
    /// How many attributes each distractor changes under the perturb policy.
    pub distractor_changes: usize,
    pub seed: u64,
    /// Bound on resampling when a draw cannot be completed.
    pub max_attempts: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            configurations: vec![Configuration::Center, Configuration::Grid2x2],
            resolution: 96,
            min_non_constant: 1,
            max_non_constant: 2,
            distractor_policy: DistractorPolicy::Balanced,
            distractor_changes: 1,
            seed: 0,
            max_attempts: 64,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 32 {
            return Err(Error::invalid(format!("resolution {} below 32", self.resolution)));
        }
        if self.min_non_constant > self.max_non_constant {
            return Err(Error::invalid("min_non_constant exceeds max_non_constant"));
        }
        if self.configurations.is_empty() {
            return Err(Error::invalid("no configurations requested"));
        }
        if self.distractor_changes == 0 {
            return Err(Error::invalid("distractors must change at least one attribute"));
        }
        Ok(())
    }
}

/// Attribute assignment of the full 3x3 matrix, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeGrid {
    pub configuration: Configuration,
    pub cells: [[CellAttrs; 3]; 3],
}

/// Inclusive value range of `attribute` in `configuration`.
pub fn value_range(attribute: Attribute, configuration: Configuration) -> (i32, i32) {
    match attribute {
        Attribute::Type => (0, ShapeType::ALL.len() as i32 - 1),
        Attribute::Size => (0, SIZE_LEVELS as i32 - 1),
        Attribute::Color => (0, COLOR_LEVELS as i32 - 1),
        Attribute::Number if has_variable_number(configuration) => (1, slot_count(configuration) as i32),
        Attribute::Number => {
            let n = slot_count(configuration) as i32;
            (n, n)
        }
    }
}

/// Attributes that may take a non-constant rule in `configuration`.
pub fn variable_attributes(configuration: Configuration) -> Vec<Attribute> {
    let mut v = vec![Attribute::Type, Attribute::Size, Attribute::Color];
    if has_variable_number(configuration) {
        v.push(Attribute::Number);
    }
    v
}

/// Non-constant rule categories an attribute may take.
pub fn legal_categories(attribute: Attribute) -> &'static [RuleCategory] {
    match attribute {
        Attribute::Size | Attribute::Color => &[
            RuleCategory::Progression,
            RuleCategory::Arithmetic,
            RuleCategory::DistributeThree,
        ],
        Attribute::Type | Attribute::Number => &[RuleCategory::Progression, RuleCategory::DistributeThree],
    }
}

fn feasible_steps(attribute: Attribute, configuration: Configuration) -> Vec<i32> {
    let (lo, hi) = value_range(attribute, configuration);
    [-2, -1, 1, 2]
        .into_iter()
        .filter(|s: &i32| 2 * s.abs() <= hi - lo)
        .collect()
}

/// Draw a rule system.
///
/// Sampling distribution: the number of non-constant rules `k` is uniform on
/// `[min, min(max, |variable attributes|)]`; the `k` attributes are a uniform
/// subset; each takes a category uniform over [`legal_categories`]; the
/// progression step is uniform over the feasible subset of `{-2,-1,1,2}` and
/// the arithmetic sign is uniform.
pub fn sample_rule_system<R: Rng + ?Sized>(
    config: &GeneratorConfig,
    configuration: Configuration,
    rng: &mut R,
) -> RuleSystem {
    let mut variable = variable_attributes(configuration);
    let hi = config.max_non_constant.min(variable.len());
    let lo = config.min_non_constant.min(hi);
    let k = rng.random_range(lo..=hi);
    variable.shuffle(rng);
    let chosen = &variable[..k];
    let entries = Attribute::ALL
        .iter()
        .map(|&attribute| {
            let rule = if chosen.contains(&attribute) {
                match *legal_categories(attribute).choose(rng).expect("non-empty") {
                    RuleCategory::Progression => Rule::Progression {
                        step: *feasible_steps(attribute, configuration)
                            .choose(rng)
                            .expect("every variable attribute spans at least 2"),
                    },
                    RuleCategory::Arithmetic => Rule::Arithmetic {
                        add: rng.random_bool(0.5),
                    },
                    RuleCategory::DistributeThree => Rule::DistributeThree,
                    RuleCategory::Constant => Rule::Constant,
                }
            } else {
                Rule::Constant
            };
            RuleEntry { attribute, rule }
        })
        .collect();
    RuleSystem::new(entries).expect("one entry per attribute")
}

fn sample_values<R: Rng + ?Sized>(rule: Rule, lo: i32, hi: i32, rng: &mut R) -> Result<[[i32; 3]; 3]> {
    let exhausted = |reason: &str| Error::GenerationExhausted {
        attempts: 1,
        reason: reason.to_string(),
    };
    let mut rows = [[0; 3]; 3];
    match rule {
        Rule::Constant => {
            let v = rng.random_range(lo..=hi);
            rows = [[v; 3]; 3];
        }
        Rule::Progression { step } => {
            let starts: Vec<i32> = (lo..=hi).filter(|s| (lo..=hi).contains(&(s + 2 * step))).collect();
            for row in &mut rows {
                let s = *starts
                    .choose(rng)
                    .ok_or_else(|| exhausted("progression overflows range"))?;
                *row = [s, s + step, s + 2 * step];
            }
        }
        Rule::Arithmetic { add } => {
            let mut pairs = Vec::new();
            for a in lo..=hi {
                for b in 1.max(lo)..=hi {
                    let c = if add { a + b } else { a - b };
                    if (lo..=hi).contains(&c) {
                        pairs.push((a, b, c));
                    }
                }
            }
            for row in &mut rows {
                let &(a, b, c) = pairs
                    .choose(rng)
                    .ok_or_else(|| exhausted("arithmetic overflows range"))?;
                *row = [a, b, c];
            }
        }
        Rule::DistributeThree => {
            let pool: Vec<i32> = (lo..=hi).collect();
            if pool.len() < 3 {
                return Err(exhausted("distribute-three needs three distinct values"));
            }
            let mut set: Vec<i32> = pool.choose_multiple(rng, 3).copied().collect();
            set.shuffle(rng);
            let dir = if rng.random_bool(0.5) { 1 } else { 2 };
            for (r, row) in rows.iter_mut().enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    *v = set[(c + r * dir) % 3];
                }
            }
        }
    }
    Ok(rows)
}

/// Assign attributes to all nine cells so that every row obeys `rules`.
pub fn instantiate_grid<R: Rng + ?Sized>(
    rules: &RuleSystem,
    configuration: Configuration,
    rng: &mut R,
) -> Result<AttributeGrid> {
    let base = CellAttrs {
        shape: ShapeType::Triangle,
        size: 0,
        color: 0,
        number: 1,
    };
    let mut cells = [[base; 3]; 3];
    for attribute in Attribute::ALL {
        let (lo, hi) = value_range(attribute, configuration);
        let values = sample_values(rules.rule_for(attribute), lo, hi, rng)?;
        for r in 0..3 {
            for c in 0..3 {
                cells[r][c] = cells[r][c]
                    .with(attribute, values[r][c])
                    .ok_or_else(|| Error::GenerationExhausted {
                        attempts: 1,
                        reason: format!("{attribute:?} value {} not encodable", values[r][c]),
                    })?;
            }
        }
    }
    Ok(AttributeGrid { configuration, cells })
}

/// Does `row` obey `rule` on `attribute`, given the first row as reference?
pub fn row_obeys(rule: Rule, attribute: Attribute, row: &[CellAttrs; 3], reference: &[CellAttrs; 3]) -> bool {
    let v = row.map(|c| c.get(attribute));
    let r = reference.map(|c| c.get(attribute));
    match rule {
        Rule::Constant => v.iter().all(|&x| x == r[0]),
        Rule::Progression { step } => v[1] - v[0] == step && v[2] - v[1] == step,
        Rule::Arithmetic { add } => v[1] >= 1 && v[2] == if add { v[0] + v[1] } else { v[0] - v[1] },
        Rule::DistributeThree => {
            let mut a = v;
            let mut b = r;
            a.sort_unstable();
            b.sort_unstable();
            a == b && a[0] != a[1] && a[1] != a[2]
        }
    }
}

/// Does `row` obey every entry of `system`?
pub fn row_satisfies(system: &RuleSystem, row: &[CellAttrs; 3], reference: &[CellAttrs; 3]) -> bool {
    system
        .entries
        .iter()
        .all(|e| row_obeys(e.rule, e.attribute, row, reference))
}

/// Rule oracle: does completing the third row with `candidate_index` satisfy
/// the stored rule system?
pub fn verify_rules(problem: &RpmProblem, candidate_index: usize) -> Result<bool> {
    let ann = problem
        .rules()
        .ok_or_else(|| Error::Unsupported(format!("problem `{}` carries no rule metadata", problem.id())))?;
    if candidate_index >= CANDIDATES {
        return Err(Error::invalid(format!(
            "candidate index {candidate_index} outside [0,7]"
        )));
    }
    let first = [ann.context[0], ann.context[1], ann.context[2]];
    let third = [ann.context[6], ann.context[7], ann.candidates[candidate_index]];
    Ok(row_satisfies(&ann.system, &third, &first))
}

fn alterable(configuration: Configuration) -> Vec<Attribute> {
    Attribute::ALL
        .into_iter()
        .filter(|&a| {
            let (lo, hi) = value_range(a, configuration);
            hi > lo
        })
        .collect()
}

fn altered_value<R: Rng + ?Sized>(
    attribute: Attribute,
    current: i32,
    configuration: Configuration,
    rng: &mut R,
) -> i32 {
    let (lo, hi) = value_range(attribute, configuration);
    let options: Vec<i32> = (lo..=hi).filter(|&v| v != current).collect();
    *options.choose(rng).expect("range spans two values")
}

fn perturb<R: Rng + ?Sized>(answer: CellAttrs, configuration: Configuration, changes: usize, rng: &mut R) -> CellAttrs {
    let mut attrs = alterable(configuration);
    attrs.shuffle(rng);
    let mut out = answer;
    for &a in attrs.iter().take(changes.max(1)) {
        let v = altered_value(a, answer.get(a), configuration, rng);
        out = out.with(a, v).expect("value in range");
    }
    out
}

/// The seven non-answer corners of an original/altered grid over three
/// attributes, in random order.
fn balanced_distractors<R: Rng + ?Sized>(
    answer: CellAttrs,
    configuration: Configuration,
    rng: &mut R,
) -> Vec<CellAttrs> {
    let mut attrs = alterable(configuration);
    attrs.shuffle(rng);
    attrs.truncate(3);
    let alt: Vec<i32> = attrs
        .iter()
        .map(|&a| altered_value(a, answer.get(a), configuration, rng))
        .collect();
    let mut out: Vec<CellAttrs> = (1..1usize << attrs.len())
        .map(|mask| {
            attrs.iter().enumerate().fold(answer, |cell, (k, &a)| {
                if mask >> k & 1 == 1 {
                    cell.with(a, alt[k]).expect("value in range")
                } else {
                    cell
                }
            })
        })
        .collect();
    out.shuffle(rng);
    out
}

fn perturbed_distractors<R: Rng + ?Sized>(
    answer: CellAttrs,
    configuration: Configuration,
    changes: usize,
    rng: &mut R,
) -> Vec<CellAttrs> {
    let mut seen: HashSet<CellAttrs> = HashSet::from([answer]);
    let mut out = Vec::with_capacity(CANDIDATES - 1);
    let mut tries = 0;
    while out.len() < CANDIDATES - 1 && tries < 64 * CANDIDATES {
        tries += 1;
        let d = perturb(answer, configuration, changes, rng);
        if seen.insert(d) {
            out.push(d);
        }
    }
    out
}

/// Generate one problem. The answer slot is uniform over the eight candidates.
pub fn generate_problem<R: Rng + ?Sized>(
    config: &GeneratorConfig,
    configuration: Configuration,
    id: impl Into<String>,
    rng: &mut R,
) -> Result<RpmProblem> {
    config.validate()?;
    let id = id.into();
    let mut last_reason = String::new();
    for _ in 0..config.max_attempts {
        let rules = sample_rule_system(config, configuration, rng);
        let grid = match instantiate_grid(&rules, configuration, rng) {
            Ok(g) => g,
            Err(e) => {
                last_reason = e.to_string();
                continue;
            }
        };
        let answer_attrs = grid.cells[2][2];
        let distractors = match config.distractor_policy {
            DistractorPolicy::Balanced => balanced_distractors(answer_attrs, configuration, rng),
            DistractorPolicy::Perturb => {
                perturbed_distractors(answer_attrs, configuration, config.distractor_changes, rng)
            }
        };
        if distractors.len() < CANDIDATES - 1 {
            last_reason = "could not find seven distinct distractors".into();
            continue;
        }
        let answer = rng.random_range(0..CANDIDATES);
        let mut candidate_attrs = distractors;
        candidate_attrs.insert(answer, answer_attrs);

        let outer = matches!(configuration, Configuration::OutInCenter | Configuration::OutInGrid)
            .then(|| *ShapeType::ALL.choose(rng).expect("non-empty"));
        let context_attrs: Vec<CellAttrs> = grid.cells.iter().flatten().take(8).copied().collect();
        let render = |a: &CellAttrs| render_cell(a, configuration, outer, config.resolution);
        let context = context_attrs.iter().map(render).collect();
        let candidates = candidate_attrs.iter().map(render).collect();
        let problem = RpmProblem::new(id.clone(), context, candidates, configuration)?
            .with_answer(answer)?
            .with_rules(RuleAnnotation {
                system: rules,
                context: context_attrs,
                candidates: candidate_attrs,
                outer,
            })?;
        let passing = (0..CANDIDATES)
            .filter(|&k| verify_rules(&problem, k).unwrap_or(false))
            .count();
        if passing == 1 && verify_rules(&problem, answer)? {
            return Ok(problem);
        }
        last_reason = format!("{passing} candidates satisfy the rules");
    }
    Err(Error::GenerationExhausted {
        attempts: config.max_attempts,
        reason: last_reason,
    })
}

/// Deterministic per-problem random stream, independent of generation order.
pub fn problem_rng(seed: u64, configuration: Configuration, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((configuration.index() as u64) << 40) | index as u64);
    rng
}

pub fn problem_id(configuration: Configuration, index: usize) -> String {
    format!("{}-{index:06}", configuration.slug())
}

/// `count` problems for every configuration in `config`, in configuration order.
///
/// Each problem draws from its own stream, so the output is identical with or
/// without parallel workers.
pub fn generate_dataset(config: &GeneratorConfig, count: usize) -> Result<Vec<RpmProblem>> {
    config.validate()?;
    let mut out = Vec::with_capacity(count * config.configurations.len());
    for &configuration in &config.configurations {
        let batch = exec::map_range(count, |i| {
            let mut rng = problem_rng(config.seed, configuration, i);
            generate_problem(config, configuration, problem_id(configuration, i), &mut rng)
        });
        for p in batch {
            out.push(p?);
        }
    }
    Ok(out)
}
