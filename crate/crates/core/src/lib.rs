pub mod crypto;
pub mod timing;
pub mod channel;
pub mod collective;
pub mod ddp_sim;
pub mod cost_model;
