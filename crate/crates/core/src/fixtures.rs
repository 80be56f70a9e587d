//! Canonical small table used throughout the test suites.
//!
//! Columns `Revenue{Q1,Q2}, Cost{Q1,Q2}`, rows `2020, 2021`:
//!
//! ```text
//!         Revenue   Cost
//!         Q1  Q2    Q1  Q2
//! 2020    10  20     5   8
//! 2021    30  40    12  16
//! ```

use crate::table::{load_spec_str, TableSpec};

const FIXTURE_A: &str = r#"{
  "table_id": "fixture-a",
  "columns": [
    {"label": "Revenue", "children": [{"label": "Q1"}, {"label": "Q2"}]},
    {"label": "Cost", "children": [{"label": "Q1"}, {"label": "Q2"}]}
  ],
  "rows": [{"label": "2020"}, {"label": "2021"}],
  "cells": [["10", "20", "5", "8"], ["30", "40", "12", "16"]]
}
"#;

pub fn fixture_a_json() -> &'static str {
    FIXTURE_A
}

pub fn fixture_a() -> TableSpec {
    load_spec_str(FIXTURE_A).expect("fixture parses")
}
