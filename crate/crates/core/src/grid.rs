//! The grid DSL and its compilation into ground Horn rules.
//!
//! Grid files are plain UTF-8 text, one row per line (LF or CRLF), one
//! character per cell:
//!
//! ```text
//! #    wall
//! .    floor
//! S    start (single-agent grids)
//! G    goal
//! a-z  key
//! A-Z  door opened by the same-letter key
//! 0-9  agent start (multi-agent grids, which may omit S and G)
//! ```
//!
//! Compilation emits, for every ordered pair of adjacent non-wall cells, a
//! movement rule gated by `has_key` when the target is a door, plus one
//! pickup rule per key cell. Rule ids follow a row-major scan with
//! directions ordered N, E, S, W, so the same grid always compiles to the
//! same rule set.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::logic::{
    ActionLabel, AgentId, Cell, Direction, KeyId, KnowledgeBase, Proposition, Rule, RuleId,
};

/// Errors raised while parsing a grid file; positions are 1-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseError {
    RaggedRows { line: usize, expected: usize, found: usize },
    UnknownChar { ch: char, line: usize, col: usize },
    MissingStart,
    MissingGoal,
    DuplicateStart { line: usize, col: usize },
    DuplicateGoal { line: usize, col: usize },
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseError::RaggedRows { line, expected, found } => {
                write!(f, "line {line}: row has {found} cells, expected {expected}")
            }
            ParseError::UnknownChar { ch, line, col } => {
                write!(f, "line {line}, column {col}: unknown character {ch:?}")
            }
            ParseError::MissingStart => write!(f, "grid has no start marker (S or agent digit)"),
            ParseError::MissingGoal => write!(f, "grid has no goal marker (G)"),
            ParseError::DuplicateStart { line, col } => {
                write!(f, "line {line}, column {col}: duplicate start marker")
            }
            ParseError::DuplicateGoal { line, col } => {
                write!(f, "line {line}, column {col}: duplicate goal marker")
            }
        }
    }
}

impl std::error::Error for ParseError {}

/// Non-fatal oddities detected in an otherwise valid grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GridWarning {
    /// A door whose key letter appears nowhere in the grid.
    DoorWithoutKey { door: KeyId, cell: Cell },
}

impl fmt::Display for GridWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridWarning::DoorWithoutKey { door, cell } => {
                write!(f, "door '{}' at {} has no matching key", door.0.to_ascii_uppercase(), cell)
            }
        }
    }
}

/// A parsed grid environment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridWorld {
    width: u32,
    height: u32,
    walls: BTreeSet<Cell>,
    keys: BTreeMap<Cell, KeyId>,
    doors: BTreeMap<Cell, KeyId>,
    start: Cell,
    goal: Option<Cell>,
    agents: BTreeMap<AgentId, Cell>,
}

impl GridWorld {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    /// The goal cell. Present on every single-agent grid; multi-agent
    /// scenario grids may leave it to the scenario definition.
    pub fn goal(&self) -> Option<Cell> {
        self.goal
    }

    pub fn walls(&self) -> &BTreeSet<Cell> {
        &self.walls
    }

    pub fn keys(&self) -> &BTreeMap<Cell, KeyId> {
        &self.keys
    }

    pub fn doors(&self) -> &BTreeMap<Cell, KeyId> {
        &self.doors
    }

    pub fn agents(&self) -> &BTreeMap<AgentId, Cell> {
        &self.agents
    }

    pub fn is_multi_agent(&self) -> bool {
        !self.agents.is_empty()
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.x < self.width && cell.y < self.height
    }

    pub fn is_wall(&self, cell: Cell) -> bool {
        self.walls.contains(&cell)
    }

    pub fn key_at(&self, cell: Cell) -> Option<KeyId> {
        self.keys.get(&cell).copied()
    }

    pub fn door_at(&self, cell: Cell) -> Option<KeyId> {
        self.doors.get(&cell).copied()
    }

    /// The adjacent cell in `dir`, if it stays in bounds.
    pub fn neighbor(&self, cell: Cell, dir: Direction) -> Option<Cell> {
        let (dx, dy) = dir.delta();
        let x = cell.x as i64 + dx;
        let y = cell.y as i64 + dy;
        if x < 0 || y < 0 {
            return None;
        }
        let next = Cell::new(x as u32, y as u32);
        self.in_bounds(next).then_some(next)
    }

    pub fn cell_count(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    /// Doors whose key letter never appears as a key cell.
    pub fn warnings(&self) -> Vec<GridWarning> {
        let present: BTreeSet<KeyId> = self.keys.values().copied().collect();
        self.doors
            .iter()
            .filter(|(_, key)| !present.contains(key))
            .map(|(cell, key)| GridWarning::DoorWithoutKey { door: *key, cell: *cell })
            .collect()
    }

    /// Renders the grid back to its textual form (rows joined by newlines,
    /// no trailing newline).
    pub fn render(&self) -> String {
        let mut rows = Vec::with_capacity(self.height as usize);
        let agent_cells: BTreeMap<Cell, AgentId> =
            self.agents.iter().map(|(id, cell)| (*cell, *id)).collect();
        for y in 0..self.height {
            let mut row = String::with_capacity(self.width as usize);
            for x in 0..self.width {
                let cell = Cell::new(x, y);
                let ch = if let Some(id) = agent_cells.get(&cell) {
                    char::from_digit(id.0 as u32, 10).expect("agent ids are single digits")
                } else if self.goal == Some(cell) {
                    'G'
                } else if self.agents.is_empty() && cell == self.start {
                    'S'
                } else if self.walls.contains(&cell) {
                    '#'
                } else if let Some(key) = self.keys.get(&cell) {
                    key.0
                } else if let Some(door) = self.doors.get(&cell) {
                    door.0.to_ascii_uppercase()
                } else {
                    '.'
                };
                row.push(ch);
            }
            rows.push(row);
        }
        rows.join("\n")
    }
}

/// Strips a trailing newline and normalizes CRLF to LF.
pub fn normalize(text: &str) -> String {
    text.replace("\r\n", "\n").trim_end_matches('\n').to_string()
}

/// Parses grid text into a [`GridWorld`].
pub fn parse_grid(text: &str) -> Result<GridWorld, ParseError> {
    let normalized = normalize(text);
    let lines: Vec<&str> = if normalized.is_empty() {
        Vec::new()
    } else {
        normalized.split('\n').collect()
    };

    let width = lines.first().map(|l| l.chars().count()).unwrap_or(0);
    let mut walls = BTreeSet::new();
    let mut keys = BTreeMap::new();
    let mut doors = BTreeMap::new();
    let mut agents: BTreeMap<AgentId, Cell> = BTreeMap::new();
    let mut start: Option<(Cell, usize, usize)> = None;
    let mut goal: Option<Cell> = None;

    for (y, line) in lines.iter().enumerate() {
        let row: Vec<char> = line.chars().collect();
        if row.len() != width {
            return Err(ParseError::RaggedRows { line: y + 1, expected: width, found: row.len() });
        }
        for (x, ch) in row.into_iter().enumerate() {
            let cell = Cell::new(x as u32, y as u32);
            let (line_no, col_no) = (y + 1, x + 1);
            match ch {
                '.' => {}
                '#' => {
                    walls.insert(cell);
                }
                'S' => {
                    if start.is_some() {
                        return Err(ParseError::DuplicateStart { line: line_no, col: col_no });
                    }
                    start = Some((cell, line_no, col_no));
                }
                'G' => {
                    if goal.is_some() {
                        return Err(ParseError::DuplicateGoal { line: line_no, col: col_no });
                    }
                    goal = Some(cell);
                }
                'a'..='z' => {
                    keys.insert(cell, KeyId(ch));
                }
                'A'..='Z' => {
                    doors.insert(cell, KeyId(ch.to_ascii_lowercase()));
                }
                '0'..='9' => {
                    let id = AgentId(ch.to_digit(10).unwrap() as u8);
                    if agents.contains_key(&id) {
                        return Err(ParseError::DuplicateStart { line: line_no, col: col_no });
                    }
                    agents.insert(id, cell);
                }
                _ => return Err(ParseError::UnknownChar { ch, line: line_no, col: col_no }),
            }
        }
    }

    // Single-agent grids take their start from S; multi-agent grids fall
    // back to the lowest agent digit so position-based operations still
    // have an anchor.
    let start = match (start, agents.first_key_value()) {
        (Some((cell, _, _)), _) => cell,
        (None, Some((_, cell))) => *cell,
        (None, None) => return Err(ParseError::MissingStart),
    };
    if goal.is_none() && agents.is_empty() {
        return Err(ParseError::MissingGoal);
    }

    Ok(GridWorld {
        width: width as u32,
        height: lines.len() as u32,
        walls,
        keys,
        doors,
        start,
        goal,
        agents,
    })
}

/// A grid compiled to its rule encoding.
#[derive(Clone, Debug)]
pub struct CompiledEnv {
    pub rules: Vec<Rule>,
    /// The initial knowledge base, `{at(start)}`.
    pub initial: KnowledgeBase,
    /// The proposition whose proof constitutes success, `at(goal)`.
    pub goal_prop: Proposition,
    /// Environment action realized by each rule.
    pub action_map: BTreeMap<RuleId, ActionLabel>,
}

impl CompiledEnv {
    pub fn movement_rules(&self) -> impl Iterator<Item = &Rule> {
        self.rules
            .iter()
            .filter(|r| matches!(r.action(), Some(ActionLabel::Move(_))))
    }
}

/// Compiles a grid into ground rules.
///
/// For each ordered pair of adjacent non-wall cells (s, s'):
/// `at(s) & has_key(k) -> at(s')` when s' is a door with key k, otherwise
/// `at(s) -> at(s')`. Every key cell c additionally yields
/// `at(c) -> has_key(k)`. Multi-agent grids without a goal cell compile
/// with a placeholder goal equal to the start; scenario code supplies the
/// real objective.
pub fn compile_rules(world: &GridWorld) -> CompiledEnv {
    let mut rules = Vec::new();
    let mut next_id = 0u32;

    for y in 0..world.height() {
        for x in 0..world.width() {
            let from = Cell::new(x, y);
            if world.is_wall(from) {
                continue;
            }
            for dir in Direction::ALL {
                let Some(to) = world.neighbor(from, dir) else { continue };
                if world.is_wall(to) {
                    continue;
                }
                let mut antecedents = vec![Proposition::At(from)];
                if let Some(key) = world.door_at(to) {
                    antecedents.push(Proposition::HasKey(key));
                }
                let rule = Rule::new(
                    RuleId(next_id),
                    antecedents,
                    Proposition::At(to),
                    Some(ActionLabel::Move(dir)),
                )
                .expect("movement rules are well-formed");
                rules.push(rule);
                next_id += 1;
            }
        }
    }

    for (cell, key) in world.keys() {
        let rule = Rule::new(
            RuleId(next_id),
            vec![Proposition::At(*cell)],
            Proposition::HasKey(*key),
            Some(ActionLabel::Pickup(*key)),
        )
        .expect("pickup rules are well-formed");
        rules.push(rule);
        next_id += 1;
    }

    let mut initial = KnowledgeBase::new();
    initial.insert(Proposition::At(world.start()));
    let goal_prop = Proposition::At(world.goal().unwrap_or_else(|| world.start()));
    let action_map = rules
        .iter()
        .filter_map(|r| r.action().map(|a| (r.id(), a)))
        .collect();

    CompiledEnv { rules, initial, goal_prop, action_map }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::{close, proves};

    #[test]
    fn straight_corridor_parses() {
        let world = parse_grid("S.G").unwrap();
        assert_eq!((world.width(), world.height()), (3, 1));
        assert_eq!(world.start(), Cell::new(0, 0));
        assert_eq!(world.goal(), Some(Cell::new(2, 0)));
        assert!(world.walls().is_empty());
    }

    #[test]
    fn wall_cell_is_recorded() {
        let world = parse_grid("S#G").unwrap();
        assert!(world.is_wall(Cell::new(1, 0)));
    }

    #[test]
    fn key_and_door_cells_are_recorded() {
        let world = parse_grid("Sa\nAG").unwrap();
        assert_eq!((world.width(), world.height()), (2, 2));
        assert_eq!(world.key_at(Cell::new(1, 0)), Some(KeyId('a')));
        assert_eq!(world.door_at(Cell::new(0, 1)), Some(KeyId('a')));
    }

    #[test]
    fn crlf_input_is_accepted() {
        let world = parse_grid("S.\r\n.G\r\n").unwrap();
        assert_eq!((world.width(), world.height()), (2, 2));
    }

    #[test]
    fn parse_errors_carry_positions() {
        assert_eq!(
            parse_grid("S.G\n.."),
            Err(ParseError::RaggedRows { line: 2, expected: 3, found: 2 })
        );
        assert_eq!(
            parse_grid("S G"),
            Err(ParseError::UnknownChar { ch: ' ', line: 1, col: 2 })
        );
        assert_eq!(parse_grid("..G"), Err(ParseError::MissingStart));
        assert_eq!(parse_grid("S.."), Err(ParseError::MissingGoal));
        assert_eq!(
            parse_grid("SSG"),
            Err(ParseError::DuplicateStart { line: 1, col: 2 })
        );
        assert_eq!(
            parse_grid("SGG"),
            Err(ParseError::DuplicateGoal { line: 1, col: 3 })
        );
        assert_eq!(
            parse_grid("0.1\n..0"),
            Err(ParseError::DuplicateStart { line: 2, col: 3 })
        );
    }

    #[test]
    fn door_without_key_is_a_warning_not_an_error() {
        let world = parse_grid("SAG").unwrap();
        let warnings = world.warnings();
        assert_eq!(warnings.len(), 1);
        assert_eq!(
            warnings[0],
            GridWarning::DoorWithoutKey { door: KeyId('a'), cell: Cell::new(1, 0) }
        );
    }

    #[test]
    fn multi_agent_grid_may_omit_start_and_goal() {
        let world = parse_grid("0a1A").unwrap();
        assert!(world.is_multi_agent());
        assert_eq!(world.agents().len(), 2);
        assert_eq!(world.start(), Cell::new(0, 0));
        assert_eq!(world.goal(), None);
    }

    #[test]
    fn render_round_trips_through_parse() {
        for text in ["S.G", "S#G", "Sa\nAG", "0a1A", "S..\n#A.\na.G"] {
            let world = parse_grid(text).unwrap();
            assert_eq!(world.render(), normalize(text));
            assert_eq!(parse_grid(&world.render()).unwrap(), world);
        }
    }

    #[test]
    fn corridor_compiles_to_four_movement_rules() {
        let world = parse_grid("S.G").unwrap();
        let env = compile_rules(&world);
        assert_eq!(env.rules.len(), 4);
        assert!(env.rules.iter().all(|r| r.antecedents().len() == 1));
        assert_eq!(env.initial.len(), 1);
        assert!(env.initial.contains(&Proposition::at(0, 0)));
        assert_eq!(env.goal_prop, Proposition::at(2, 0));
    }

    #[test]
    fn walls_block_rule_emission() {
        let world = parse_grid("S#G").unwrap();
        let env = compile_rules(&world);
        assert!(env.rules.is_empty());
        let out = close(&env.initial, &env.rules);
        assert!(!proves(&out.facts, &env.goal_prop));
    }

    #[test]
    fn door_entry_rules_require_the_key() {
        let world = parse_grid("SaAG").unwrap();
        let env = compile_rules(&world);
        let door = Cell::new(2, 0);
        for rule in &env.rules {
            if rule.consequent() == &Proposition::At(door) {
                assert_eq!(rule.antecedents().len(), 2);
                assert!(rule.antecedents().contains(&Proposition::has_key('a')));
            }
        }
        let pickups: Vec<_> = env
            .rules
            .iter()
            .filter(|r| matches!(r.action(), Some(ActionLabel::Pickup(_))))
            .collect();
        assert_eq!(pickups.len(), 1);
        assert_eq!(pickups[0].antecedents(), &[Proposition::at(1, 0)]);
        assert_eq!(pickups[0].consequent(), &Proposition::has_key('a'));

        let out = close(&env.initial, &env.rules);
        assert!(proves(&out.facts, &env.goal_prop));
    }

    #[test]
    fn rule_ids_are_assigned_in_scan_order() {
        let world = parse_grid("S.G").unwrap();
        let env = compile_rules(&world);
        let ids: Vec<u32> = env.rules.iter().map(|r| r.id().0).collect();
        assert_eq!(ids, vec![0, 1, 2, 3]);
        // (0,0) East first, then (1,0) East/West, then (2,0) West.
        assert_eq!(env.rules[0].consequent(), &Proposition::at(1, 0));
        assert_eq!(env.action_map[&RuleId(0)], ActionLabel::Move(Direction::East));
    }
}
