//! The T-maze gridworld: two terminal arms at the top of a corridor, a room
//! at the bottom containing a target object that is only visible from inside
//! the room. Hidden state is (agent position, target object); observations
//! are the 3x3 egocentric neighborhood; transitions are deterministic;
//! reaching the terminal matching the target pays `1 - 0.9 * t / max_steps`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::ObjectDecay;
use crate::pomdp::{Belief, DiscretePomdp, PomdpError};

pub const ACTION_UP: usize = 0;
pub const ACTION_DOWN: usize = 1;
pub const ACTION_LEFT: usize = 2;
pub const ACTION_RIGHT: usize = 3;
pub const ACTION_STAY: usize = 4;
pub const N_ACTIONS: usize = 5;

/// Cell-content codes used in egocentric observations.
pub const CODE_WALL: u8 = 0;
pub const CODE_FLOOR: u8 = 1;
pub const CODE_TERMINAL_LEFT: u8 = 2;
pub const CODE_TERMINAL_RIGHT: u8 = 3;
/// Object kind `k` renders as `CODE_OBJECT_BASE + k`.
pub const CODE_OBJECT_BASE: u8 = 4;

#[derive(Debug, Error)]
pub enum TmazeError {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error(transparent)]
    Pomdp(#[from] PomdpError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TmazeConfig {
    pub corridor_length: usize,
    pub room_height: usize,
    pub room_width: usize,
    pub n_objects: usize,
    pub max_steps: usize,
    /// `(row, col)` in grid coordinates; defaults to the bottom corridor cell.
    pub start_cell: Option<(usize, usize)>,
}

impl Default for TmazeConfig {
    fn default() -> Self {
        Self {
            corridor_length: 1,
            room_height: 3,
            room_width: 3,
            n_objects: 2,
            max_steps: 400,
            start_cell: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TmazeState {
    /// Grid coordinate `(row, col)`.
    pub position: (usize, usize),
    /// Target object index.
    pub target: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cell {
    Wall,
    Floor,
    TerminalLeft,
    TerminalRight,
    /// Displays the target object; not walkable.
    ObjectSlot,
}

/// The built T-maze: a tabular POMDP plus the codecs between grid-level
/// states/renders and flat indices.
#[derive(Debug, Clone)]
pub struct Tmaze {
    pub config: TmazeConfig,
    pub pomdp: DiscretePomdp,
    width: usize,
    height: usize,
    grid: Vec<Cell>,
    /// Walkable positions in index order.
    positions: Vec<(usize, usize)>,
    pos_index: BTreeMap<(usize, usize), usize>,
    /// Renders (including erased variants) in observation-index order.
    renders: Vec<[u8; 9]>,
    /// Base observation -> its object-erased counterpart, if it shows one.
    erase_map: Vec<Option<usize>>,
    /// Observation shows a target-object cell.
    critical: Vec<bool>,
    terminal_left: usize,
    terminal_right: usize,
    start_pos: usize,
    object_cell: (usize, usize),
}

impl Tmaze {
    pub fn n_states(&self) -> usize {
        self.positions.len() * self.config.n_objects
    }

    pub fn n_positions(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn state_index(&self, state: TmazeState) -> usize {
        self.pos_index[&state.position] * self.config.n_objects + state.target
    }

    #[inline]
    pub fn state_of(&self, index: usize) -> TmazeState {
        TmazeState {
            position: self.positions[index / self.config.n_objects],
            target: index % self.config.n_objects,
        }
    }

    pub fn start_state(&self, target: usize) -> TmazeState {
        TmazeState {
            position: self.positions[self.start_pos],
            target,
        }
    }

    /// The deterministic observation index for a state.
    pub fn observation_of(&self, state: TmazeState) -> usize {
        let render = self.render_view(state.position, state.target);
        self.renders.iter().position(|r| *r == render).unwrap()
    }

    pub fn render(&self, obs: usize) -> &[u8; 9] {
        &self.renders[obs]
    }

    /// Base observation -> erased counterpart (the memory-decay target).
    pub fn erase_map(&self) -> &[Option<usize>] {
        &self.erase_map
    }

    pub fn decay_model(&self) -> ObjectDecay {
        ObjectDecay::new(self.erase_map.clone())
    }

    /// True iff the observation shows a target-object cell.
    pub fn critical_observation(&self, obs: usize) -> bool {
        self.critical[obs]
    }

    /// The decision cell at the top of the corridor, between the two arms.
    pub fn junction(&self) -> (usize, usize) {
        (0, self.width / 2)
    }

    pub fn is_terminal(&self, position: (usize, usize)) -> bool {
        matches!(
            self.grid[position.0 * self.width + position.1],
            Cell::TerminalLeft | Cell::TerminalRight
        )
    }

    /// The terminal position that pays off for a target object.
    /// Even object indices map to the left arm, odd ones to the right.
    pub fn correct_terminal(&self, target: usize) -> (usize, usize) {
        if target % 2 == 0 {
            self.positions[self.terminal_left]
        } else {
            self.positions[self.terminal_right]
        }
    }

    /// True iff the object slot is inside the 3x3 view from `position`.
    pub fn object_visible(&self, position: (usize, usize)) -> bool {
        let (r, c) = (position.0 as isize, position.1 as isize);
        let (or, oc) = (self.object_cell.0 as isize, self.object_cell.1 as isize);
        (r - or).abs() <= 1 && (c - oc).abs() <= 1
    }

    /// Positions from which the object slot is visible.
    pub fn object_visible_positions(&self) -> Vec<(usize, usize)> {
        self.positions
            .iter()
            .copied()
            .filter(|p| self.object_visible(*p))
            .collect()
    }

    /// Reward for arriving in `next_state` after the `t`-th action
    /// (t counts actions taken so far, including this one).
    pub fn reward_fn(&self, state: TmazeState, _action: usize, next_state: TmazeState, t: usize) -> f64 {
        if !self.is_terminal(state.position)
            && self.is_terminal(next_state.position)
            && next_state.position == self.correct_terminal(next_state.target)
        {
            1.0 - 0.9 * t as f64 / self.config.max_steps as f64
        } else {
            0.0
        }
    }

    /// Deterministic environment step: `(next_state, reward, done)` where
    /// `t` is the number of actions taken including this one.
    pub fn step(&self, state: TmazeState, action: usize, t: usize) -> (TmazeState, f64, bool) {
        let next_pos = self.move_from(state.position, action);
        let next_state = TmazeState {
            position: next_pos,
            target: state.target,
        };
        let reward = self.reward_fn(state, action, next_state, t);
        let done = self.is_terminal(next_pos) || t >= self.config.max_steps;
        (next_state, reward, done)
    }

    fn move_from(&self, (r, c): (usize, usize), action: usize) -> (usize, usize) {
        if self.is_terminal((r, c)) {
            return (r, c); // absorbing
        }
        let (dr, dc): (isize, isize) = match action {
            ACTION_UP => (-1, 0),
            ACTION_DOWN => (1, 0),
            ACTION_LEFT => (0, -1),
            ACTION_RIGHT => (0, 1),
            _ => (0, 0),
        };
        let nr = r as isize + dr;
        let nc = c as isize + dc;
        if nr < 0 || nc < 0 || nr as usize >= self.height || nc as usize >= self.width {
            return (r, c);
        }
        let np = (nr as usize, nc as usize);
        if self.walkable(np) {
            np
        } else {
            (r, c)
        }
    }

    fn walkable(&self, (r, c): (usize, usize)) -> bool {
        !matches!(self.grid[r * self.width + c], Cell::Wall | Cell::ObjectSlot)
    }

    /// Uniform belief over (start position) x (object kinds).
    pub fn initial_belief(&self) -> Belief {
        let support: Vec<usize> = (0..self.config.n_objects)
            .map(|k| self.start_pos * self.config.n_objects + k)
            .collect();
        Belief::uniform_over(self.n_states(), &support)
    }

    /// BFS distances from every walkable position to `goal`, moving through
    /// non-terminal cells only.
    pub fn bfs_distances(&self, goal: (usize, usize)) -> BTreeMap<(usize, usize), usize> {
        let mut dist = BTreeMap::new();
        dist.insert(goal, 0usize);
        let mut frontier = vec![goal];
        while let Some(p) = frontier.pop() {
            let d = dist[&p];
            for neighbor in self.neighbors_into(p) {
                if !dist.contains_key(&neighbor) {
                    dist.insert(neighbor, d + 1);
                    frontier.insert(0, neighbor);
                }
            }
        }
        dist
    }

    /// Positions `q` such that a single move from `q` reaches `p`.
    fn neighbors_into(&self, p: (usize, usize)) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (dr, dc) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
            let nr = p.0 as isize + dr;
            let nc = p.1 as isize + dc;
            if nr < 0 || nc < 0 || nr as usize >= self.height || nc as usize >= self.width {
                continue;
            }
            let q = (nr as usize, nc as usize);
            if self.walkable(q) && !self.is_terminal(q) {
                out.push(q);
            }
        }
        out
    }

    /// Length of the shortest start-to-correct-terminal path for a target,
    /// ignoring the need to observe the object first.
    pub fn shortest_path_len(&self, target: usize) -> usize {
        let dist = self.bfs_distances(self.correct_terminal(target));
        dist[&self.positions[self.start_pos]]
    }

    /// Length of the shortest successful path for an agent that must sight
    /// the object before committing: min over object-visible cells v of
    /// d(start, v) + d(v, terminal).
    pub fn informed_path_len(&self, target: usize) -> usize {
        let to_terminal = self.bfs_distances(self.correct_terminal(target));
        let start = self.positions[self.start_pos];
        self.object_visible_positions()
            .iter()
            .map(|v| {
                let from_start = self.bfs_distances(*v);
                from_start[&start] + to_terminal[v]
            })
            .min()
            .expect("layout has object-visible cells")
    }

    /// Greedy fully-informed action at a state: first move of a shortest
    /// path to the correct terminal (ties broken by action index).
    pub fn optimal_action(&self, state: TmazeState) -> usize {
        if self.is_terminal(state.position) {
            return ACTION_STAY;
        }
        let dist = self.bfs_distances(self.correct_terminal(state.target));
        let mut best = (ACTION_STAY, dist[&state.position]);
        for action in [ACTION_UP, ACTION_DOWN, ACTION_LEFT, ACTION_RIGHT] {
            let p = self.move_from(state.position, action);
            if p == state.position {
                continue;
            }
            // Terminal cells have no BFS entry unless they are the goal.
            let d = if p == self.correct_terminal(state.target) {
                0
            } else {
                match self.bfs_distances(self.correct_terminal(state.target)).get(&p) {
                    Some(d) => *d,
                    None => continue,
                }
            };
            if d < best.1 {
                best = (action, d);
            }
        }
        best.0
    }

    fn render_view(&self, (r, c): (usize, usize), target: usize) -> [u8; 9] {
        let mut view = [CODE_WALL; 9];
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                let idx = ((dr + 1) * 3 + (dc + 1)) as usize;
                let nr = r as isize + dr;
                let nc = c as isize + dc;
                if nr < 0 || nc < 0 || nr as usize >= self.height || nc as usize >= self.width {
                    continue;
                }
                view[idx] = match self.grid[nr as usize * self.width + nc as usize] {
                    Cell::Wall => CODE_WALL,
                    Cell::Floor => CODE_FLOOR,
                    Cell::TerminalLeft => CODE_TERMINAL_LEFT,
                    Cell::TerminalRight => CODE_TERMINAL_RIGHT,
                    Cell::ObjectSlot => CODE_OBJECT_BASE + target as u8,
                };
            }
        }
        view
    }

    /// ASCII rendering: one grid row per line, then a `target=k` footer.
    /// `#` wall, `.` floor, `L`/`R` terminals, digits for object kinds,
    /// `A` the agent.
    pub fn render_ascii(&self, state: TmazeState) -> String {
        let mut out = String::new();
        for r in 0..self.height {
            for c in 0..self.width {
                let ch = if (r, c) == state.position {
                    'A'
                } else {
                    match self.grid[r * self.width + c] {
                        Cell::Wall => '#',
                        Cell::Floor => '.',
                        Cell::TerminalLeft => 'L',
                        Cell::TerminalRight => 'R',
                        Cell::ObjectSlot => (b'0' + state.target as u8) as char,
                    }
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out.push_str(&format!("target={}\n", state.target));
        out
    }

    /// Inverse of [`render_ascii`] given the same layout.
    pub fn parse_ascii(&self, text: &str) -> Option<TmazeState> {
        let mut position = None;
        let mut target = None;
        for (r, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix("target=") {
                target = rest.parse().ok();
            } else {
                for (c, ch) in line.chars().enumerate() {
                    if ch == 'A' {
                        position = Some((r, c));
                    }
                }
            }
        }
        Some(TmazeState {
            position: position?,
            target: target?,
        })
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    pub fn position_index(&self, p: (usize, usize)) -> Option<usize> {
        self.pos_index.get(&p).copied()
    }
}

/// Build the T-maze as a tabular POMDP plus codecs.
///
/// Layout (grid rows top to bottom): row 0 holds the two terminal arms
/// around the junction; the corridor descends for `corridor_length` rows;
/// the room spans the bottom `room_height` rows with the object slot at its
/// center, under the corridor.
pub fn build_tmaze(config: &TmazeConfig) -> Result<Tmaze, TmazeError> {
    if config.room_width < 3 {
        return Err(TmazeError::InvalidLayout("room_width must be >= 3".into()));
    }
    if config.room_height < 1 || config.corridor_length < 1 {
        return Err(TmazeError::InvalidLayout(
            "corridor_length and room_height must be >= 1".into(),
        ));
    }
    if config.n_objects < 2 {
        return Err(TmazeError::InvalidLayout("need at least 2 object kinds".into()));
    }
    if config.max_steps == 0 {
        return Err(TmazeError::InvalidLayout("max_steps must be positive".into()));
    }

    let width = config.room_width;
    let height = 1 + config.corridor_length + config.room_height;
    let col = width / 2;
    let room_top = 1 + config.corridor_length;
    let object_cell = (room_top + (config.room_height - 1) / 2, col);

    let mut grid = vec![Cell::Wall; width * height];
    grid[col - 1] = Cell::TerminalLeft;
    grid[col] = Cell::Floor;
    grid[col + 1] = Cell::TerminalRight;
    for r in 1..=config.corridor_length {
        grid[r * width + col] = Cell::Floor;
    }
    for r in room_top..height {
        for c in 0..width {
            grid[r * width + c] = Cell::Floor;
        }
    }
    grid[object_cell.0 * width + object_cell.1] = Cell::ObjectSlot;

    let start = config.start_cell.unwrap_or((config.corridor_length, col));
    if start.0 >= height || start.1 >= width {
        return Err(TmazeError::InvalidLayout("start_cell out of bounds".into()));
    }
    match grid[start.0 * width + start.1] {
        Cell::Floor => {}
        _ => {
            return Err(TmazeError::InvalidLayout(
                "start_cell must be a non-terminal floor cell".into(),
            ))
        }
    }

    let mut positions = Vec::new();
    let mut pos_index = BTreeMap::new();
    for r in 0..height {
        for c in 0..width {
            if !matches!(grid[r * width + c], Cell::Wall | Cell::ObjectSlot) {
                pos_index.insert((r, c), positions.len());
                positions.push((r, c));
            }
        }
    }

    let mut maze = Tmaze {
        config: config.clone(),
        // placeholder; replaced below once the tables exist
        pomdp: DiscretePomdp::new(
            1,
            1,
            1,
            vec![1.0],
            vec![1.0],
            vec![0.0],
            1.0,
            1,
            None,
        )?,
        width,
        height,
        grid,
        terminal_left: 0,
        terminal_right: 0,
        start_pos: 0,
        positions,
        pos_index,
        renders: Vec::new(),
        erase_map: Vec::new(),
        critical: Vec::new(),
        object_cell,
    };
    maze.terminal_left = maze.pos_index[&(0, col - 1)];
    maze.terminal_right = maze.pos_index[&(0, col + 1)];
    maze.start_pos = maze.pos_index[&start];

    // Object must require entering the room: not visible from corridor,
    // junction, or arm cells.
    for p in maze.positions.clone() {
        let in_room = p.0 >= room_top;
        if maze.object_visible(p) && !in_room {
            return Err(TmazeError::InvalidLayout(
                "object slot is visible from outside the room".into(),
            ));
        }
    }
    if maze.object_visible_positions().is_empty() {
        return Err(TmazeError::InvalidLayout("object slot is never visible".into()));
    }

    // Intern observations: every state's render, then erased variants of
    // object-bearing renders as coarse observations.
    let n_objects = config.n_objects;
    let n_states = maze.positions.len() * n_objects;
    let mut render_index: BTreeMap<[u8; 9], usize> = BTreeMap::new();
    let mut renders: Vec<[u8; 9]> = Vec::new();
    let mut state_obs = vec![0usize; n_states];
    for s in 0..n_states {
        let st = maze.state_of(s);
        let render = maze.render_view(st.position, st.target);
        let idx = *render_index.entry(render).or_insert_with(|| {
            renders.push(render);
            renders.len() - 1
        });
        state_obs[s] = idx;
    }
    let n_base = renders.len();
    let mut erase_map: Vec<Option<usize>> = vec![None; n_base];
    let mut coarse: Vec<Vec<usize>> = (0..n_base).map(|o| vec![o]).collect();
    for base in 0..n_base {
        let render = renders[base];
        if render.iter().any(|code| *code >= CODE_OBJECT_BASE) {
            let mut erased = render;
            for code in erased.iter_mut() {
                if *code >= CODE_OBJECT_BASE {
                    *code = CODE_FLOOR;
                }
            }
            let idx = *render_index.entry(erased).or_insert_with(|| {
                renders.push(erased);
                coarse.push(Vec::new());
                renders.len() - 1
            });
            erase_map[base] = Some(idx);
            coarse[idx].push(base);
        }
    }
    let n_obs = renders.len();
    erase_map.resize(n_obs, None);
    let critical: Vec<bool> = renders
        .iter()
        .map(|r| r.iter().any(|code| *code >= CODE_OBJECT_BASE))
        .collect();

    // Dense tables.
    let mut transition = vec![0.0; n_states * N_ACTIONS * n_states];
    let mut observation = vec![0.0; n_states * n_obs];
    let mut reward = vec![0.0; n_states * N_ACTIONS];
    for s in 0..n_states {
        let st = maze.state_of(s);
        observation[s * n_obs + state_obs[s]] = 1.0;
        for a in 0..N_ACTIONS {
            let next = TmazeState {
                position: maze.move_from(st.position, a),
                target: st.target,
            };
            let sp = maze.state_index(next);
            transition[(s * N_ACTIONS + a) * n_states + sp] = 1.0;
            // Undiscounted success indicator; the time-dependent payout
            // lives in reward_fn.
            if !maze.is_terminal(st.position)
                && maze.is_terminal(next.position)
                && next.position == maze.correct_terminal(next.target)
            {
                reward[s * N_ACTIONS + a] = 1.0;
            }
        }
    }

    maze.pomdp = DiscretePomdp::new(
        n_states,
        N_ACTIONS,
        n_obs,
        transition,
        observation,
        reward,
        1.0,
        config.max_steps,
        Some(coarse),
    )?;
    maze.renders = renders;
    maze.erase_map = erase_map;
    maze.critical = critical;
    Ok(maze)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_maze() -> Tmaze {
        build_tmaze(&TmazeConfig::default()).unwrap()
    }

    #[test]
    fn stay_leaves_position_unchanged() {
        let maze = default_maze();
        let s = maze.start_state(0);
        let (next, r, done) = maze.step(s, ACTION_STAY, 1);
        assert_eq!(next.position, s.position);
        assert_eq!(r, 0.0);
        assert!(!done);
    }

    #[test]
    fn transitions_are_deterministic_one_hot() {
        let maze = default_maze();
        for s in 0..maze.n_states() {
            for a in 0..N_ACTIONS {
                assert_eq!(maze.pomdp.successors(s, a).len(), 1);
            }
        }
    }

    #[test]
    fn observations_are_deterministic_one_hot() {
        let maze = default_maze();
        for s in 0..maze.n_states() {
            let row: Vec<f64> = (0..maze.pomdp.n_observations)
                .map(|o| maze.pomdp.observation_prob(o, s))
                .collect();
            assert_eq!(row.iter().filter(|p| **p == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|p| **p == 0.0).count(), row.len() - 1);
        }
    }

    #[test]
    fn object_appears_in_bottom_row_from_cell_above() {
        let maze = default_maze();
        // Exhaustive: for every state whose position is directly above the
        // object slot, the object code is in the view's bottom row.
        for s in 0..maze.n_states() {
            let st = maze.state_of(s);
            if st.position.0 + 1 == maze.object_cell.0 && st.position.1 == maze.object_cell.1 {
                let view = maze.render(maze.observation_of(st));
                let code = CODE_OBJECT_BASE + st.target as u8;
                assert!(view[6..9].contains(&code), "view {view:?}");
            }
        }
    }

    #[test]
    fn object_not_visible_outside_room() {
        let maze = default_maze();
        for s in 0..maze.n_states() {
            let st = maze.state_of(s);
            let in_room = st.position.0 >= 1 + maze.config.corridor_length;
            let view = maze.render(maze.observation_of(st));
            let has_object = view.iter().any(|c| *c >= CODE_OBJECT_BASE);
            if !in_room {
                assert!(!has_object, "object visible from {:?}", st.position);
            }
        }
    }

    #[test]
    fn reward_endpoints() {
        let maze = default_maze();
        let junction = TmazeState {
            position: (0, 1),
            target: 1,
        };
        // Correct terminal at t = max_steps pays 0.1.
        let (next, r, done) = maze.step(junction, ACTION_RIGHT, maze.config.max_steps);
        assert!(maze.is_terminal(next.position));
        assert!((r - 0.1).abs() < 1e-12);
        assert!(done);
        // Wrong terminal pays 0 at any time.
        let (_, r, done) = maze.step(junction, ACTION_LEFT, 3);
        assert_eq!(r, 0.0);
        assert!(done);
    }

    #[test]
    fn informed_path_matches_hand_count() {
        let maze = default_maze();
        // Down to sight the object (1), back up to the junction (2), turn (1).
        assert_eq!(maze.informed_path_len(0), 4);
        assert_eq!(maze.shortest_path_len(0), 2);
        // The 4-step success pays 1 - 0.9 * 4/400 = 0.991.
        let r = 1.0 - 0.9 * maze.informed_path_len(0) as f64 / maze.config.max_steps as f64;
        assert!((r - 0.991).abs() < 1e-12);
    }

    #[test]
    fn informed_controller_succeeds() {
        let maze = default_maze();
        for target in 0..2 {
            let mut st = maze.start_state(target);
            let mut t = 0;
            loop {
                t += 1;
                let a = maze.optimal_action(st);
                let (next, r, done) = maze.step(st, a, t);
                st = next;
                if done {
                    assert!(r > 0.0, "controller failed for target {target}");
                    break;
                }
            }
            assert_eq!(t, maze.shortest_path_len(target));
        }
    }

    #[test]
    fn ascii_round_trip_and_layout() {
        let maze = default_maze();
        let st = maze.start_state(1);
        let text = maze.render_ascii(st);
        assert_eq!(maze.parse_ascii(&text), Some(st));
        assert_eq!(text.matches('L').count(), 1);
        assert_eq!(text.matches('R').count(), 1);
    }

    #[test]
    fn all_walkable_cells_reachable_from_start() {
        let maze = default_maze();
        // Flood fill from start: every non-terminal position must be reached,
        // terminals are reachable as goals.
        let start = maze.positions()[maze.start_pos];
        let dist = maze.bfs_distances(start);
        for p in maze.positions() {
            if maze.is_terminal(*p) {
                let adjacent_reached = maze
                    .neighbors_into(*p)
                    .iter()
                    .any(|q| dist.contains_key(q));
                assert!(adjacent_reached, "terminal {p:?} unreachable");
            } else {
                assert!(dist.contains_key(p), "cell {p:?} unreachable");
            }
        }
    }

    #[test]
    fn erased_observation_is_coarse_over_both_targets() {
        let maze = default_maze();
        let visible = maze.object_visible_positions()[0];
        let st = TmazeState {
            position: visible,
            target: 0,
        };
        let obs = maze.observation_of(st);
        let erased = maze.erase_map()[obs].unwrap();
        assert!(maze.pomdp.is_coarse(erased));
        // The erased view is equally likely under either target.
        let s0 = maze.state_index(st);
        let s1 = maze.state_index(TmazeState {
            position: visible,
            target: 1,
        });
        assert_eq!(maze.pomdp.obs_likelihood(erased, s0), 1.0);
        assert_eq!(maze.pomdp.obs_likelihood(erased, s1), 1.0);
    }

    #[test]
    fn invalid_layouts_rejected() {
        let cfg = TmazeConfig {
            room_width: 2,
            ..Default::default()
        };
        assert!(build_tmaze(&cfg).is_err());
        let cfg = TmazeConfig {
            start_cell: Some((0, 0)),
            ..Default::default()
        };
        assert!(build_tmaze(&cfg).is_err());
        // A one-row room puts the object next to the corridor: visible from
        // outside the room.
        let cfg = TmazeConfig {
            room_height: 1,
            ..Default::default()
        };
        assert!(build_tmaze(&cfg).is_err());
    }
}
