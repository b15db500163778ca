use crate::error::{Error, Result};

/// Grid cell addressed (row, col) from the top-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Spiral,
    Loop,
}

impl Topology {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "spiral" => Ok(Topology::Spiral),
            "loop" => Ok(Topology::Loop),
            other => Err(Error::config(format!("unknown maze topology '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Topology::Spiral => "spiral",
            Topology::Loop => "loop",
        }
    }
}

/// Side length of every maze in the family.
pub const GRID_SIDE: usize = 6;

/// Canonical layouts. `#` wall, `.` floor, `S` start, `G` goal candidate,
/// `K` key, `C` chest. The same grammar is accepted from plain-text files.
pub const LOOP_LAYOUT: &str = "\
SGGGGG
G####G
G####G
G####G
G####G
GGGGGG";

pub const SPIRAL_LAYOUT: &str = "\
SGGGGG
#####G
GGGG#G
G##G#G
G####G
GGGGGG";

pub const KEYCHEST_LAYOUT: &str = "\
SGGGGK
G####G
G####G
G####G
G####G
CGGGGG";

/// Static maze description: occupancy, start, goal candidates, and the
/// optional key/chest cells.
#[derive(Debug, Clone)]
pub struct MazeSpec {
    pub topology: Topology,
    floor: [[bool; GRID_SIDE]; GRID_SIDE],
    pub start: Cell,
    pub goal_candidates: Vec<Cell>,
    pub key: Option<Cell>,
    pub chest: Option<Cell>,
}

impl MazeSpec {
    /// Parses the plain-text grid grammar shared by shipped files and the
    /// embedded canonical layouts.
    pub fn from_grid_text(text: &str, topology: Topology) -> Result<Self> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if rows.len() != GRID_SIDE {
            return Err(Error::config(format!(
                "maze must have {GRID_SIDE} rows, found {}",
                rows.len()
            )));
        }
        let mut floor = [[false; GRID_SIDE]; GRID_SIDE];
        let mut start = None;
        let mut goal_candidates = Vec::new();
        let mut key = None;
        let mut chest = None;
        for (r, line) in rows.iter().enumerate() {
            let chars: Vec<char> = line.trim().chars().collect();
            if chars.len() != GRID_SIDE {
                return Err(Error::config(format!(
                    "maze row {r} must have {GRID_SIDE} cells, found {}",
                    chars.len()
                )));
            }
            for (c, ch) in chars.iter().enumerate() {
                let cell = Cell::new(r, c);
                match ch {
                    '#' => {}
                    '.' => floor[r][c] = true,
                    'S' => {
                        floor[r][c] = true;
                        if start.replace(cell).is_some() {
                            return Err(Error::config("maze has multiple starts"));
                        }
                    }
                    'G' => {
                        floor[r][c] = true;
                        goal_candidates.push(cell);
                    }
                    'K' => {
                        floor[r][c] = true;
                        if key.replace(cell).is_some() {
                            return Err(Error::config("maze has multiple keys"));
                        }
                    }
                    'C' => {
                        floor[r][c] = true;
                        if chest.replace(cell).is_some() {
                            return Err(Error::config("maze has multiple chests"));
                        }
                    }
                    other => {
                        return Err(Error::config(format!("unknown maze glyph '{other}'")));
                    }
                }
            }
        }
        let start = start.ok_or_else(|| Error::config("maze has no start cell"))?;
        let spec = Self {
            topology,
            floor,
            start,
            goal_candidates,
            key,
            chest,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &std::path::Path, topology: Topology) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_grid_text(&text, topology)
    }

    fn validate(&self) -> Result<()> {
        if !self.is_floor(self.start) {
            return Err(Error::config("start cell is a wall"));
        }
        for g in &self.goal_candidates {
            if !self.is_floor(*g) {
                return Err(Error::config("goal candidate on a wall"));
            }
        }
        // All floor cells must form one connected component.
        let reached = self.flood_fill(self.start);
        let floor_count = self.floor_cells().len();
        if reached.len() != floor_count {
            return Err(Error::config(format!(
                "floor is disconnected: reached {} of {floor_count} cells",
                reached.len()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn is_floor(&self, cell: Cell) -> bool {
        cell.row < GRID_SIDE && cell.col < GRID_SIDE && self.floor[cell.row][cell.col]
    }

    pub fn floor_cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for r in 0..GRID_SIDE {
            for c in 0..GRID_SIDE {
                if self.floor[r][c] {
                    out.push(Cell::new(r, c));
                }
            }
        }
        out
    }

    pub fn neighbors(&self, cell: Cell) -> Vec<Cell> {
        let mut out = Vec::with_capacity(4);
        // Right, down, left, up. The order also fixes corridor-path walking.
        let candidates = [
            (cell.row, cell.col.wrapping_add(1)),
            (cell.row.wrapping_add(1), cell.col),
            (cell.row, cell.col.wrapping_sub(1)),
            (cell.row.wrapping_sub(1), cell.col),
        ];
        for (r, c) in candidates {
            let n = Cell::new(r, c);
            if self.is_floor(n) {
                out.push(n);
            }
        }
        out
    }

    /// Breadth-first reachable set from `from`.
    pub fn flood_fill(&self, from: Cell) -> Vec<Cell> {
        let mut seen = [[false; GRID_SIDE]; GRID_SIDE];
        let mut queue = std::collections::VecDeque::new();
        let mut order = Vec::new();
        if !self.is_floor(from) {
            return order;
        }
        seen[from.row][from.col] = true;
        queue.push_back(from);
        while let Some(cur) = queue.pop_front() {
            order.push(cur);
            for n in self.neighbors(cur) {
                if !seen[n.row][n.col] {
                    seen[n.row][n.col] = true;
                    queue.push_back(n);
                }
            }
        }
        order
    }

    /// Shortest path length in steps between two floor cells.
    pub fn shortest_path_len(&self, from: Cell, to: Cell) -> Option<usize> {
        let mut dist = [[usize::MAX; GRID_SIDE]; GRID_SIDE];
        let mut queue = std::collections::VecDeque::new();
        dist[from.row][from.col] = 0;
        queue.push_back(from);
        while let Some(cur) = queue.pop_front() {
            if cur == to {
                return Some(dist[cur.row][cur.col]);
            }
            for n in self.neighbors(cur) {
                if dist[n.row][n.col] == usize::MAX {
                    dist[n.row][n.col] = dist[cur.row][cur.col] + 1;
                    queue.push_back(n);
                }
            }
        }
        None
    }

    /// Walks the corridor from the start, taking the first unvisited floor
    /// neighbor in right/down/left/up order. For the canonical layouts this
    /// enumerates the whole corridor in a stable order used for goal
    /// placement.
    pub fn corridor_path(&self) -> Vec<Cell> {
        let mut seen = [[false; GRID_SIDE]; GRID_SIDE];
        let mut path = vec![self.start];
        seen[self.start.row][self.start.col] = true;
        let mut cur = self.start;
        loop {
            let next = self
                .neighbors(cur)
                .into_iter()
                .find(|n| !seen[n.row][n.col]);
            match next {
                Some(n) => {
                    seen[n.row][n.col] = true;
                    path.push(n);
                    cur = n;
                }
                None => break,
            }
        }
        path
    }

    /// `n` training goals spaced uniformly along the corridor, never on the
    /// start cell.
    pub fn canonical_train_goals(&self, n: usize) -> Result<Vec<Cell>> {
        let path = self.corridor_path();
        let last = path.len() - 1;
        if n == 0 || n > last {
            return Err(Error::config(format!(
                "cannot place {n} goals on a corridor of {} cells",
                path.len()
            )));
        }
        let mut goals = Vec::with_capacity(n);
        for i in 1..=n {
            let idx = (i * last) / n;
            goals.push(path[idx]);
        }
        goals.sort();
        goals.dedup();
        if goals.len() != n {
            return Err(Error::config("goal spacing produced duplicates"));
        }
        Ok(goals)
    }

    /// `n` held-out evaluation goals spread over the corridor cells not used
    /// for training.
    pub fn canonical_test_goals(&self, n: usize, train: &[Cell]) -> Result<Vec<Cell>> {
        let path = self.corridor_path();
        let remaining: Vec<Cell> = path[1..]
            .iter()
            .copied()
            .filter(|c| !train.contains(c))
            .collect();
        if n == 0 || n > remaining.len() {
            return Err(Error::config(format!(
                "cannot place {n} test goals among {} unused corridor cells",
                remaining.len()
            )));
        }
        let mut goals = Vec::with_capacity(n);
        for i in 0..n {
            let idx = (i * remaining.len()) / n;
            goals.push(remaining[idx]);
        }
        goals.sort();
        goals.dedup();
        if goals.len() != n {
            return Err(Error::config("test goal spacing produced duplicates"));
        }
        Ok(goals)
    }
}

/// Builds the canonical maze for a topology. Layouts are fixed; the seed is
/// accepted for interface stability but currently unused.
pub fn build_maze(topology: Topology, _seed: u64) -> Result<MazeSpec> {
    match topology {
        Topology::Loop => MazeSpec::from_grid_text(LOOP_LAYOUT, Topology::Loop),
        Topology::Spiral => MazeSpec::from_grid_text(SPIRAL_LAYOUT, Topology::Spiral),
    }
}

/// The canonical KeyChest grid: loop corridor with fixed key and chest.
pub fn build_keychest_maze() -> Result<MazeSpec> {
    MazeSpec::from_grid_text(KEYCHEST_LAYOUT, Topology::Loop)
}
