//! In-memory model of progressive-matrix problems, rows, rule systems and
//! dataset splits.
//!
//! Context cells are numbered 0..8 row-major (third row incomplete) and
//! candidates 0..8. Candidate `k` corresponds to the conventional cell label
//! `k + 9` when cells are labelled 1..16.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONTEXT_CELLS: usize = 8;
pub const CANDIDATES: usize = 8;

/// Square greyscale raster.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Cell {
    side: usize,
    pixels: Vec<u8>,
}

impl Cell {
    pub fn new(side: usize, pixels: Vec<u8>) -> Result<Self> {
        if side == 0 || pixels.len() != side * side {
            return Err(Error::invalid(format!(
                "cell must be square: side {side} with {} pixels",
                pixels.len()
            )));
        }
        Ok(Self { side, pixels })
    }

    /// Build from a possibly non-square raster, rejecting it if `height != width`.
    pub fn from_raster(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height != width {
            return Err(Error::invalid(format!("cell is not square: {height}x{width}")));
        }
        Self::new(width, pixels)
    }

    pub fn filled(side: usize, value: u8) -> Self {
        Self {
            side,
            pixels: vec![value; side * side],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.side + x]
    }
}

impl fmt::Debug for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mean = self.pixels.iter().map(|&p| p as u64).sum::<u64>() as f64 / self.pixels.len() as f64;
        write!(f, "Cell({}x{}, mean {:.1})", self.side, self.side, mean)
    }
}

/// Three cells in order. Borrowed from a problem (or several problems).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Row<'a> {
    pub cells: [&'a Cell; 3],
}

impl<'a> Row<'a> {
    pub fn new(a: &'a Cell, b: &'a Cell, c: &'a Cell) -> Self {
        Self { cells: [a, b, c] }
    }

    pub fn side(&self) -> usize {
        self.cells[0].side()
    }
}

/// The seven spatial layouts of the RAVEN family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Configuration {
    #[serde(rename = "Center")]
    Center,
    #[serde(rename = "2x2Grid")]
    Grid2x2,
    #[serde(rename = "3x3Grid")]
    Grid3x3,
    #[serde(rename = "Left-Right")]
    LeftRight,
    #[serde(rename = "Up-Down")]
    UpDown,
    #[serde(rename = "Out-InCenter")]
    OutInCenter,
    #[serde(rename = "Out-InGrid")]
    OutInGrid,
}

impl Configuration {
    pub const ALL: [Configuration; 7] = [
        Configuration::Center,
        Configuration::Grid2x2,
        Configuration::Grid3x3,
        Configuration::LeftRight,
        Configuration::UpDown,
        Configuration::OutInCenter,
        Configuration::OutInGrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Configuration::Center => "Center",
            Configuration::Grid2x2 => "2x2Grid",
            Configuration::Grid3x3 => "3x3Grid",
            Configuration::LeftRight => "Left-Right",
            Configuration::UpDown => "Up-Down",
            Configuration::OutInCenter => "Out-InCenter",
            Configuration::OutInGrid => "Out-InGrid",
        }
    }

    /// Short column label used in report tables.
    pub fn short_name(self) -> &'static str {
        match self {
            Configuration::Center => "Center",
            Configuration::Grid2x2 => "2x2Grid",
            Configuration::Grid3x3 => "3x3Grid",
            Configuration::LeftRight => "L-R",
            Configuration::UpDown => "U-D",
            Configuration::OutInCenter => "O-IC",
            Configuration::OutInGrid => "O-IG",
        }
    }

    /// Directory name used by the RAVEN distribution.
    pub fn raven_dir(self) -> &'static str {
        match self {
            Configuration::Center => "center_single",
            Configuration::Grid2x2 => "distribute_four",
            Configuration::Grid3x3 => "distribute_nine",
            Configuration::LeftRight => "left_center_single_right_center_single",
            Configuration::UpDown => "up_center_single_down_center_single",
            Configuration::OutInCenter => "in_center_single_out_center_single",
            Configuration::OutInGrid => "in_distribute_four_out_center_single",
        }
    }

    pub fn from_raven_dir(dir: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.raven_dir() == dir)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Lower-case alphanumeric form used in problem ids.
    pub fn slug(self) -> String {
        self.name()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase()
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Configuration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        let found = match key.as_str() {
            "center" | "centersingle" => Configuration::Center,
            "2x2grid" | "grid2x2" | "distributefour" => Configuration::Grid2x2,
            "3x3grid" | "grid3x3" | "distributenine" => Configuration::Grid3x3,
            "leftright" | "lr" => Configuration::LeftRight,
            "updown" | "ud" => Configuration::UpDown,
            "outincenter" | "oic" => Configuration::OutInCenter,
            "outingrid" | "oig" => Configuration::OutInGrid,
            _ => return Self::from_raven_dir(s).ok_or_else(|| Error::invalid(format!("unknown configuration `{s}`"))),
        };
        Ok(found)
    }
}

/// Attributes a rule can govern. `Number` stands for RAVEN's Number/Position
/// pair and only varies in grid layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Attribute {
    Type,
    Size,
    Color,
    Number,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [Attribute::Type, Attribute::Size, Attribute::Color, Attribute::Number];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Rule {
    Constant,
    /// Each row is an arithmetic sequence with this step.
    Progression {
        step: i32,
    },
    /// Third value is the sum (or difference) of the first two.
    Arithmetic {
        add: bool,
    },
    /// Every row is a permutation of one shared three-value set.
    DistributeThree,
}

impl Rule {
    pub fn is_constant(&self) -> bool {
        matches!(self, Rule::Constant)
    }

    pub fn category(&self) -> RuleCategory {
        match self {
            Rule::Constant => RuleCategory::Constant,
            Rule::Progression { .. } => RuleCategory::Progression,
            Rule::Arithmetic { .. } => RuleCategory::Arithmetic,
            Rule::DistributeThree => RuleCategory::DistributeThree,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RuleCategory {
    Constant,
    Progression,
    Arithmetic,
    DistributeThree,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleEntry {
    pub attribute: Attribute,
    pub rule: Rule,
}

/// One rule per attribute.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSystem {
    pub entries: Vec<RuleEntry>,
}

impl RuleSystem {
    pub fn new(entries: Vec<RuleEntry>) -> Result<Self> {
        for a in Attribute::ALL {
            let n = entries.iter().filter(|e| e.attribute == a).count();
            if n != 1 {
                return Err(Error::invalid(format!(
                    "rule system must govern {a:?} exactly once, found {n}"
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn rule_for(&self, attribute: Attribute) -> Rule {
        self.entries
            .iter()
            .find(|e| e.attribute == attribute)
            .map(|e| e.rule)
            .unwrap_or(Rule::Constant)
    }

    pub fn non_constant_count(&self) -> usize {
        self.entries.iter().filter(|e| !e.rule.is_constant()).count()
    }
}

/// Shape vocabulary, ordered by vertex count (circle last).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ShapeType {
    Triangle,
    Square,
    Pentagon,
    Hexagon,
    Circle,
}

impl ShapeType {
    pub const ALL: [ShapeType; 5] = [
        ShapeType::Triangle,
        ShapeType::Square,
        ShapeType::Pentagon,
        ShapeType::Hexagon,
        ShapeType::Circle,
    ];

    pub fn level(self) -> u8 {
        self as u8
    }

    pub fn from_level(level: u8) -> Option<Self> {
        Self::ALL.get(level as usize).copied()
    }
}

/// Decoded attributes of one cell: every occupied slot shares them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellAttrs {
    pub shape: ShapeType,
    pub size: u8,
    pub color: u8,
    /// Number of occupied layout slots (always 1 outside grid layouts).
    pub number: u8,
}

impl CellAttrs {
    pub fn get(&self, attribute: Attribute) -> i32 {
        match attribute {
            Attribute::Type => self.shape.level() as i32,
            Attribute::Size => self.size as i32,
            Attribute::Color => self.color as i32,
            Attribute::Number => self.number as i32,
        }
    }

    /// Returns `None` if the value is outside the attribute's encoding.
    pub fn with(mut self, attribute: Attribute, value: i32) -> Option<Self> {
        let v = u8::try_from(value).ok()?;
        match attribute {
            Attribute::Type => self.shape = ShapeType::from_level(v)?,
            Attribute::Size => self.size = v,
            Attribute::Color => self.color = v,
            Attribute::Number => self.number = v,
        }
        Some(self)
    }
}

/// Generator metadata: the rule system plus the attributes behind every raster.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleAnnotation {
    pub system: RuleSystem,
    pub context: Vec<CellAttrs>,
    pub candidates: Vec<CellAttrs>,
    /// Fixed outer component for the Out-In layouts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer: Option<ShapeType>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RpmProblem {
    id: String,
    context: Vec<Cell>,
    candidates: Vec<Cell>,
    configuration: Configuration,
    answer: Option<usize>,
    rules: Option<RuleAnnotation>,
}

impl RpmProblem {
    pub fn new(
        id: impl Into<String>,
        context: Vec<Cell>,
        candidates: Vec<Cell>,
        configuration: Configuration,
    ) -> Result<Self> {
        if context.len() != CONTEXT_CELLS || candidates.len() != CANDIDATES {
            return Err(Error::invalid(format!(
                "problem needs {CONTEXT_CELLS} context and {CANDIDATES} candidate cells, got {} and {}",
                context.len(),
                candidates.len()
            )));
        }
        let side = context[0].side();
        if context.iter().chain(&candidates).any(|c| c.side() != side) {
            return Err(Error::invalid("all cells of a problem must share one resolution"));
        }
        Ok(Self {
            id: id.into(),
            context,
            candidates,
            configuration,
            answer: None,
            rules: None,
        })
    }

    pub fn with_answer(mut self, answer: usize) -> Result<Self> {
        if answer >= CANDIDATES {
            return Err(Error::invalid(format!("answer index {answer} outside [0,7]")));
        }
        self.answer = Some(answer);
        Ok(self)
    }

    pub fn with_rules(mut self, rules: RuleAnnotation) -> Result<Self> {
        if rules.context.len() != CONTEXT_CELLS || rules.candidates.len() != CANDIDATES {
            return Err(Error::invalid(
                "rule annotation must describe 8 context and 8 candidate cells",
            ));
        }
        self.rules = Some(rules);
        Ok(self)
    }

    /// The same problem with its answer removed, as training pools require.
    pub fn unlabeled(&self) -> Self {
        Self {
            answer: None,
            ..self.clone()
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn context(&self) -> &[Cell] {
        &self.context
    }

    pub fn candidates(&self) -> &[Cell] {
        &self.candidates
    }

    pub fn configuration(&self) -> Configuration {
        self.configuration
    }

    pub fn answer(&self) -> Option<usize> {
        self.answer
    }

    pub fn rules(&self) -> Option<&RuleAnnotation> {
        self.rules.as_ref()
    }

    pub fn resolution(&self) -> usize {
        self.context[0].side()
    }

    /// Cell by position 0..16 (context then candidates).
    pub fn cell(&self, index: usize) -> &Cell {
        if index < CONTEXT_CELLS {
            &self.context[index]
        } else {
            &self.candidates[index - CONTEXT_CELLS]
        }
    }

    pub fn row_a(&self) -> Row<'_> {
        Row::new(&self.context[0], &self.context[1], &self.context[2])
    }

    pub fn row_b(&self) -> Row<'_> {
        Row::new(&self.context[3], &self.context[4], &self.context[5])
    }

    /// `(row A, row B, [cell 7, cell 8])`.
    pub fn rows_of(&self) -> (Row<'_>, Row<'_>, [&Cell; 2]) {
        (self.row_a(), self.row_b(), [&self.context[6], &self.context[7]])
    }

    /// The third row completed with candidate `candidate_index`.
    pub fn complete_row(&self, candidate_index: usize) -> Result<Row<'_>> {
        let cand = self
            .candidates
            .get(candidate_index)
            .ok_or_else(|| Error::invalid(format!("candidate index {candidate_index} outside [0,7]")))?;
        Ok(Row::new(&self.context[6], &self.context[7], cand))
    }
}

/// Train/validation/test partition as indices into a source list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Part {
    Train,
    Val,
    Test,
}

/// Fold pattern dealt round-robin: one test fold, one validation fold, three
/// training folds. The interleaving keeps every contiguous window within one
/// problem of the 60/20/20 proportions.
const FOLD_PATTERN: [Part; 5] = [Part::Test, Part::Train, Part::Val, Part::Train, Part::Train];

/// Five-fold 3:1:1 split, stratified by configuration and deterministic in `seed`.
pub fn split_folds(problems: &[RpmProblem], seed: u64) -> Result<DatasetSplit> {
    let configs: Vec<Configuration> = problems.iter().map(|p| p.configuration()).collect();
    split_by_configuration(&configs, seed)
}

/// [`split_folds`] on bare configuration labels.
pub fn split_by_configuration(configs: &[Configuration], seed: u64) -> Result<DatasetSplit> {
    if configs.len() < 5 {
        return Err(Error::invalid(format!(
            "need at least 5 problems to build five folds, got {}",
            configs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    let mut position = 0usize;
    for config in Configuration::ALL {
        let mut group: Vec<usize> = (0..configs.len()).filter(|&i| configs[i] == config).collect();
        group.shuffle(&mut rng);
        for idx in group {
            match FOLD_PATTERN[position % FOLD_PATTERN.len()] {
                Part::Train => split.train.push(idx),
                Part::Val => split.val.push(idx),
                Part::Test => split.test.push(idx),
            }
            position += 1;
        }
    }
    Ok(split)
}
