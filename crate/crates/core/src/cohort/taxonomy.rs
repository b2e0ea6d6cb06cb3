//! Cohort keys and user-to-cohort assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_AGE: u32 = 120;
pub const NO_CONDITION: &str = "none";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Male,
    Female,
    OtherOrUndisclosed,
}

impl Sex {
    fn code(self) -> &'static str {
        match self {
            Sex::Male => "M",
            Sex::Female => "F",
            Sex::OtherOrUndisclosed => "X",
        }
    }
}

/// Lower-inclusive age interval `[start, start + width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgeBin {
    start: u32,
    width: u32,
}

impl AgeBin {
    pub fn containing(age: u32, width: u32) -> Self {
        Self {
            start: age / width * width,
            width,
        }
    }

    pub fn start(&self) -> u32 {
        self.start
    }

    /// Index of the bin on the age axis; adjacent bins differ by one.
    pub fn index(&self) -> u32 {
        self.start / self.width
    }
}

impl fmt::Display for AgeBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start, self.start + self.width - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CohortKey {
    pub age_bin: AgeBin,
    pub sex: Sex,
    pub condition_category: String,
    pub region: String,
}

impl fmt::Display for CohortKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.age_bin,
            self.sex.code(),
            self.condition_category,
            self.region
        )
    }
}

impl FromStr for CohortKey {
    type Err = Error;

    /// Parses `"25-29/F/cardiovascular/US"`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("malformed cohort key `{s}`"));
        let parts: Vec<&str> = s.split('/').collect();
        let [ages, sex, condition, region] = parts.as_slice() else {
            return Err(bad());
        };
        let (lo, hi) = ages.split_once('-').ok_or_else(bad)?;
        let lo: u32 = lo.parse().map_err(|_| bad())?;
        let hi: u32 = hi.parse().map_err(|_| bad())?;
        if hi < lo {
            return Err(bad());
        }
        let width = hi - lo + 1;
        if !lo.is_multiple_of(width) {
            return Err(bad());
        }
        let sex = match *sex {
            "M" => Sex::Male,
            "F" => Sex::Female,
            "X" => Sex::OtherOrUndisclosed,
            _ => return Err(bad()),
        };
        if condition.is_empty() || region.is_empty() {
            return Err(bad());
        }
        Ok(Self {
            age_bin: AgeBin { start: lo, width },
            sex,
            condition_category: condition.to_string(),
            region: region.to_string(),
        })
    }
}

impl Serialize for CohortKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CohortKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Closed taxonomy loaded from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Taxonomy {
    #[serde(default = "default_bin_width")]
    pub bin_width: u32,
    /// category -> member conditions
    pub condition_categories: BTreeMap<String, Vec<String>>,
    pub regions: Vec<String>,
}

fn default_bin_width() -> u32 {
    5
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UserAttributes {
    pub age: u32,
    pub sex: Option<Sex>,
    pub conditions: BTreeSet<String>,
    pub region: String,
}

impl Taxonomy {
    pub fn from_json(text: &str) -> Result<Self> {
        let t: Taxonomy = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bin_width == 0 || !self.bin_width.is_multiple_of(5) {
            return Err(Error::Validation(format!(
                "bin_width must be a positive multiple of 5, got {}",
                self.bin_width
            )));
        }
        if self.condition_categories.contains_key(NO_CONDITION) {
            return Err(Error::Validation(format!("`{NO_CONDITION}` is reserved")));
        }
        let mut seen = BTreeSet::new();
        for conditions in self.condition_categories.values() {
            for c in conditions {
                if !seen.insert(c.as_str()) {
                    return Err(Error::Validation(format!("condition `{c}` listed twice")));
                }
            }
        }
        if self.regions.is_empty() {
            return Err(Error::Validation("no regions".into()));
        }
        Ok(())
    }

    pub fn category_of(&self, condition: &str) -> Option<&str> {
        self.condition_categories
            .iter()
            .find(|(_, members)| members.iter().any(|m| m == condition))
            .map(|(cat, _)| cat.as_str())
    }

    /// Every cohort the user belongs to: the condition-agnostic `none` cohort
    /// plus one cohort per distinct condition category.
    pub fn assign_cohorts(&self, user: &UserAttributes) -> Result<BTreeSet<CohortKey>> {
        if user.age > MAX_AGE {
            return Err(Error::Validation(format!("age {} exceeds {MAX_AGE}", user.age)));
        }
        if !self.regions.contains(&user.region) {
            return Err(Error::Validation(format!("unknown region `{}`", user.region)));
        }
        let mut categories = BTreeSet::from([NO_CONDITION.to_string()]);
        for c in &user.conditions {
            let cat = self
                .category_of(c)
                .ok_or_else(|| Error::Validation(format!("unknown condition `{c}`")))?;
            categories.insert(cat.to_string());
        }
        let age_bin = AgeBin::containing(user.age, self.bin_width);
        let sex = user.sex.unwrap_or(Sex::OtherOrUndisclosed);
        Ok(categories
            .into_iter()
            .map(|condition_category| CohortKey {
                age_bin,
                sex,
                condition_category,
                region: user.region.clone(),
            })
            .collect())
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        let cats = [
            (
                "cardiovascular",
                &["hypertension", "coronary_artery_disease", "arrhythmia"][..],
            ),
            ("metabolic", &["type2_diabetes", "prediabetes", "obesity"][..]),
            ("respiratory", &["asthma", "copd"][..]),
        ];
        Self {
            bin_width: 5,
            condition_categories: cats
                .iter()
                .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
                .collect(),
            regions: ["US", "UK", "DE", "JP"].iter().map(|s| s.to_string()).collect(),
        }
    }
}
