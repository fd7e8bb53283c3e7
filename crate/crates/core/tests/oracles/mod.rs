//! Independent reference implementations shared by the oracle tests and
//! the acceptance suite.
#![allow(dead_code)]

pub mod ctc;
pub mod grad;
pub mod mfcc;
