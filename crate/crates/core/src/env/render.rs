use super::maze::{Cell, MazeSpec, GRID_SIDE};

/// Raster geometry: 6 cells of 13px plus a 1px border on each side.
pub const RASTER_SIDE: usize = 80;
pub const CELL_PX: usize = 13;
pub const MARGIN_PX: usize = 1;
pub const RASTER_BYTES: usize = RASTER_SIDE * RASTER_SIDE * 3;

pub const COLOR_FLOOR: [u8; 3] = [235, 235, 235];
pub const COLOR_WALL: [u8; 3] = [40, 40, 45];
pub const COLOR_AGENT: [u8; 3] = [215, 45, 45];
pub const COLOR_GOAL: [u8; 3] = [45, 170, 60];
pub const COLOR_KEY: [u8; 3] = [235, 195, 50];
pub const COLOR_CHEST: [u8; 3] = [140, 85, 200];

/// What to draw on top of the maze. The agent is always painted last so it
/// covers any marker sharing its cell.
#[derive(Debug, Clone, Copy)]
pub struct RenderView {
    pub agent: Cell,
    pub goal_marker: Option<Cell>,
    pub key: Option<Cell>,
    pub chest: Option<Cell>,
}

fn paint_cell(raster: &mut [u8], cell: Cell, color: [u8; 3]) {
    let top = MARGIN_PX + cell.row * CELL_PX;
    let left = MARGIN_PX + cell.col * CELL_PX;
    for r in top..top + CELL_PX {
        for c in left..left + CELL_PX {
            let idx = (r * RASTER_SIDE + c) * 3;
            raster[idx..idx + 3].copy_from_slice(&color);
        }
    }
}

/// Deterministic 80x80x3 byte raster of the maze and the requested markers.
pub fn render_pixels(maze: &MazeSpec, view: &RenderView) -> Vec<u8> {
    let mut raster = vec![0u8; RASTER_BYTES];
    // Border and wall background.
    for px in raster.chunks_exact_mut(3) {
        px.copy_from_slice(&COLOR_WALL);
    }
    for r in 0..GRID_SIDE {
        for c in 0..GRID_SIDE {
            let cell = Cell::new(r, c);
            if maze.is_floor(cell) {
                paint_cell(&mut raster, cell, COLOR_FLOOR);
            }
        }
    }
    if let Some(goal) = view.goal_marker {
        paint_cell(&mut raster, goal, COLOR_GOAL);
    }
    if let Some(key) = view.key {
        paint_cell(&mut raster, key, COLOR_KEY);
    }
    if let Some(chest) = view.chest {
        paint_cell(&mut raster, chest, COLOR_CHEST);
    }
    paint_cell(&mut raster, view.agent, COLOR_AGENT);
    raster
}

/// Recovers the agent cell from a raster by matching the agent color at each
/// cell-block center. Test oracle for render/rebuild consistency.
pub fn agent_cell_from_raster(raster: &[u8]) -> Option<Cell> {
    for r in 0..GRID_SIDE {
        for c in 0..GRID_SIDE {
            let pr = MARGIN_PX + r * CELL_PX + CELL_PX / 2;
            let pc = MARGIN_PX + c * CELL_PX + CELL_PX / 2;
            let idx = (pr * RASTER_SIDE + pc) * 3;
            if raster[idx..idx + 3] == COLOR_AGENT {
                return Some(Cell::new(r, c));
            }
        }
    }
    None
}

/// Number of 13x13 cell blocks whose pixels differ between two rasters.
/// Ignores the border, which is constant by construction.
pub fn differing_cell_blocks(a: &[u8], b: &[u8]) -> Vec<Cell> {
    let mut out = Vec::new();
    for r in 0..GRID_SIDE {
        for c in 0..GRID_SIDE {
            let cell = Cell::new(r, c);
            let top = MARGIN_PX + r * CELL_PX;
            let left = MARGIN_PX + c * CELL_PX;
            'block: for pr in top..top + CELL_PX {
                for pc in left..left + CELL_PX {
                    let idx = (pr * RASTER_SIDE + pc) * 3;
                    if a[idx..idx + 3] != b[idx..idx + 3] {
                        out.push(cell);
                        break 'block;
                    }
                }
            }
        }
    }
    out
}

/// Block-mean downsample to `RASTER_SIDE/factor` per side, rescaled to
/// [0,1] reals. The encoders consume this flattened vector.
pub fn downsample(raster: &[u8], factor: usize) -> Vec<f64> {
    assert_eq!(raster.len(), RASTER_BYTES);
    assert_eq!(RASTER_SIDE % factor, 0);
    let side = RASTER_SIDE / factor;
    let norm = 1.0 / (factor * factor * 255) as f64;
    let mut out = vec![0.0; side * side * 3];
    for r in 0..RASTER_SIDE {
        for c in 0..RASTER_SIDE {
            let src = (r * RASTER_SIDE + c) * 3;
            let dst = ((r / factor) * side + c / factor) * 3;
            for ch in 0..3 {
                out[dst + ch] += raster[src + ch] as f64 * norm;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::maze::{build_maze, Topology};

    #[test]
    fn raster_has_fixed_dims_and_is_deterministic() {
        let maze = build_maze(Topology::Loop, 0).unwrap();
        let view = RenderView {
            agent: maze.start,
            goal_marker: Some(Cell::new(5, 5)),
            key: None,
            chest: None,
        };
        let a = render_pixels(&maze, &view);
        let b = render_pixels(&maze, &view);
        assert_eq!(a.len(), 80 * 80 * 3);
        assert_eq!(a, b);
    }

    #[test]
    fn moving_agent_changes_exactly_two_blocks() {
        let maze = build_maze(Topology::Loop, 0).unwrap();
        let goal = Cell::new(5, 5);
        let a = render_pixels(
            &maze,
            &RenderView {
                agent: Cell::new(0, 0),
                goal_marker: Some(goal),
                key: None,
                chest: None,
            },
        );
        let b = render_pixels(
            &maze,
            &RenderView {
                agent: Cell::new(0, 1),
                goal_marker: Some(goal),
                key: None,
                chest: None,
            },
        );
        let diff = differing_cell_blocks(&a, &b);
        assert_eq!(diff, vec![Cell::new(0, 0), Cell::new(0, 1)]);
    }

    #[test]
    fn agent_cell_decodes_back_from_pixels() {
        let maze = build_maze(Topology::Spiral, 0).unwrap();
        for cell in maze.floor_cells() {
            let raster = render_pixels(
                &maze,
                &RenderView {
                    agent: cell,
                    goal_marker: Some(maze.start),
                    key: None,
                    chest: None,
                },
            );
            assert_eq!(agent_cell_from_raster(&raster), Some(cell));
        }
    }

    #[test]
    fn downsample_preserves_mean_brightness() {
        let maze = build_maze(Topology::Loop, 0).unwrap();
        let raster = render_pixels(
            &maze,
            &RenderView {
                agent: maze.start,
                goal_marker: None,
                key: None,
                chest: None,
            },
        );
        let small = downsample(&raster, 4);
        assert_eq!(small.len(), 20 * 20 * 3);
        let full_mean: f64 =
            raster.iter().map(|&v| v as f64 / 255.0).sum::<f64>() / raster.len() as f64;
        let small_mean: f64 = small.iter().sum::<f64>() / small.len() as f64;
        assert!((full_mean - small_mean).abs() < 1e-9);
        assert!(small.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
