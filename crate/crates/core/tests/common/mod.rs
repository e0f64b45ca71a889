#![allow(dead_code)]

pub mod cnn;
pub mod detect;
