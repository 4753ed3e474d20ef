#![no_std]
extern crate alloc;

pub mod constraint;
pub mod dom;
pub mod embed;
pub mod ferg;
pub mod llm;
pub mod pipeline;
pub mod simulator;
pub mod submission;
pub mod text;
