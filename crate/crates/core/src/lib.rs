pub mod crypto;
mod id;
pub mod kdc;

pub use id::NodeId;
pub mod netsim;
pub mod ecms;
pub mod srdp;
pub mod sbccp;
pub mod harness;
