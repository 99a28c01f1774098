//! Interactive documentation-lookup agents for code generation in
//! low-resource programming languages.

pub mod agent;
pub mod analysis;
pub mod bench;
pub mod cli;
pub mod docstore;
pub mod http;
pub mod par;
pub mod policy;
pub mod retrieval;
pub mod sandbox;
pub mod typeindex;
