#![allow(dead_code)]

pub mod attention;
pub mod counts;
pub mod oracle;
