pub mod alphacoder;
pub mod hierarchy;
pub mod kneighbor;
pub mod optimal_tree;
pub mod oracles;
pub mod quantizer;
