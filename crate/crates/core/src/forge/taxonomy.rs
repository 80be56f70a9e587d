use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    L1,
    L2,
    L3,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::L1, Level::L2, Level::L3];

    pub fn name(&self) -> &'static str {
        match self {
            Level::L1 => "Perception",
            Level::L2 => "Reasoning",
            Level::L3 => "Analysis",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// The thirteen task categories, in taxonomy order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskCategory {
    Retrieval,
    Listing,
    Structure,
    Comparison,
    Arithmetic,
    Ranking,
    Counting,
    #[serde(rename = "Cond. Filtering")]
    CondFiltering,
    Verification,
    #[serde(rename = "Comp. Arithmetic")]
    CompArithmetic,
    #[serde(rename = "Multi-hop")]
    MultiHop,
    Temporal,
    #[serde(rename = "Cross-hier. Agg.")]
    CrossHierAgg,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 13] = [
        TaskCategory::Retrieval,
        TaskCategory::Listing,
        TaskCategory::Structure,
        TaskCategory::Comparison,
        TaskCategory::Arithmetic,
        TaskCategory::Ranking,
        TaskCategory::Counting,
        TaskCategory::CondFiltering,
        TaskCategory::Verification,
        TaskCategory::CompArithmetic,
        TaskCategory::MultiHop,
        TaskCategory::Temporal,
        TaskCategory::CrossHierAgg,
    ];

    pub fn level(&self) -> Level {
        use TaskCategory::*;
        match self {
            Retrieval | Listing | Structure => Level::L1,
            Comparison | Arithmetic | Ranking | Counting | CondFiltering | Verification => Level::L2,
            CompArithmetic | MultiHop | Temporal | CrossHierAgg => Level::L3,
        }
    }

    pub fn name(&self) -> &'static str {
        use TaskCategory::*;
        match self {
            Retrieval => "Retrieval",
            Listing => "Listing",
            Structure => "Structure",
            Comparison => "Comparison",
            Arithmetic => "Arithmetic",
            Ranking => "Ranking",
            Counting => "Counting",
            CondFiltering => "Cond. Filtering",
            Verification => "Verification",
            CompArithmetic => "Comp. Arithmetic",
            MultiHop => "Multi-hop",
            Temporal => "Temporal",
            CrossHierAgg => "Cross-hier. Agg.",
        }
    }

    /// Lower-case identifier used in instance ids.
    pub fn slug(&self) -> &'static str {
        use TaskCategory::*;
        match self {
            Retrieval => "retrieval",
            Listing => "listing",
            Structure => "structure",
            Comparison => "comparison",
            Arithmetic => "arithmetic",
            Ranking => "ranking",
            Counting => "counting",
            CondFiltering => "cond-filtering",
            Verification => "verification",
            CompArithmetic => "comp-arithmetic",
            MultiHop => "multi-hop",
            Temporal => "temporal",
            CrossHierAgg => "cross-hier-agg",
        }
    }
}

impl fmt::Display for TaskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskCategory {
    type Err = String;

    /// Accepts the display name or the slug.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        TaskCategory::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(t) || c.slug() == t)
            .ok_or_else(|| format!("unknown task category {s:?}"))
    }
}
