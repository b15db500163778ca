//! Deterministic 6x6 pixel gridworlds: SpiralWorld and LoopWorld for
//! goal-reaching, KeyChest for hierarchical control.

mod grid;
mod maze;
mod render;

pub use grid::{
    render_state, Action, GoalDistribution, GridEnv, GridState, KeyChestEnv, KeyChestState,
    RenderMode, StepOutcome, DEFAULT_HORIZON,
};
pub use maze::{
    build_keychest_maze, build_maze, Cell, MazeSpec, Topology, GRID_SIDE, KEYCHEST_LAYOUT,
    LOOP_LAYOUT, SPIRAL_LAYOUT,
};
pub use render::{
    agent_cell_from_raster, differing_cell_blocks, downsample, render_pixels, RenderView,
    CELL_PX, COLOR_AGENT, COLOR_CHEST, COLOR_FLOOR, COLOR_GOAL, COLOR_KEY, COLOR_WALL, MARGIN_PX,
    RASTER_BYTES, RASTER_SIDE,
};
