pub mod diff_engine;
pub mod grid;
pub mod kitti_io;
pub mod lidar_adaptation;
pub mod evaluation;
pub mod model;
pub mod semi_supervised;
