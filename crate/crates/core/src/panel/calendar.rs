use serde::{Deserialize, Serialize};

use super::{Panel, Quarter};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefitPolicy {
    /// Refit before every test quarter on all quarters observed so far,
    /// starting `train_years` before the test year.
    #[default]
    QuarterlyExpanding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollingWindowSpec {
    pub test_years: Vec<i32>,
    pub train_years: usize,
    #[serde(default)]
    pub refit: RefitPolicy,
}

/// One forecast: fit on columns `train_start..target`, predict column `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForecastOrigin {
    pub train_start: usize,
    pub target: usize,
}

impl ForecastOrigin {
    pub fn train_len(&self) -> usize {
        self.target - self.train_start
    }

    /// Last training column, i.e. the forecast origin.
    pub fn origin(&self) -> usize {
        self.target - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pub test_year: i32,
    pub origins: [ForecastOrigin; 4],
}

impl RollingWindowSpec {
    pub fn new(test_years: Vec<i32>, train_years: usize) -> Self {
        Self { test_years, train_years, refit: RefitPolicy::QuarterlyExpanding }
    }

    /// Contiguous range of test years `first..=last`.
    pub fn years(first: i32, last: i32, train_years: usize) -> Self {
        Self::new((first..=last).collect(), train_years)
    }

    /// Resolves the calendar against a panel.
    ///
    /// The quarter being forecast is never in its own training set: Q1 uses
    /// `4·train_years` quarters and Q4 uses `4·train_years + 3`.
    pub fn plan(&self, panel: &Panel) -> Result<Vec<WindowPlan>> {
        if self.train_years == 0 {
            return Err(Error::InfeasibleCalendar("train_years must be positive".into()));
        }
        if self.test_years.is_empty() {
            return Err(Error::InfeasibleCalendar("no test years".into()));
        }
        if self.test_years.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InfeasibleCalendar("test years must be strictly increasing".into()));
        }
        self.test_years
            .iter()
            .map(|&year| {
                let start_q = Quarter::new(year - self.train_years as i32, 1)?;
                let start = panel.quarter_index(start_q).ok_or_else(|| {
                    Error::InfeasibleCalendar(format!(
                        "test year {year} needs training data from {start_q}, panel starts at {}",
                        panel.quarters()[0]
                    ))
                })?;
                let mut origins = [ForecastOrigin { train_start: start, target: 0 }; 4];
                for (k, slot) in origins.iter_mut().enumerate() {
                    let q = Quarter::new(year, k as u8 + 1)?;
                    slot.target = panel.quarter_index(q).ok_or_else(|| {
                        Error::InfeasibleCalendar(format!("test quarter {q} not in panel"))
                    })?;
                }
                Ok(WindowPlan { test_year: year, origins })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_support::panel_from_rows;
    use super::*;

    #[test]
    fn training_expands_twenty_to_twenty_three() {
        let p = panel_from_rows(&[vec![0.0; 64]], "2009Q1");
        let plan = RollingWindowSpec::years(2015, 2016, 5).plan(&p).unwrap();
        let w = &plan[0];
        assert_eq!(p.quarters()[w.origins[0].train_start].to_string(), "2010Q1");
        let lens: Vec<usize> = w.origins.iter().map(|o| o.train_len()).collect();
        assert_eq!(lens, vec![20, 21, 22, 23]);
        assert_eq!(p.quarters()[w.origins[3].origin()].to_string(), "2015Q3");
        assert_eq!(p.quarters()[w.origins[3].target].to_string(), "2015Q4");
    }

    #[test]
    fn infeasible_when_history_short() {
        let p = panel_from_rows(&[vec![0.0; 24]], "2012Q1");
        assert!(matches!(
            RollingWindowSpec::years(2015, 2015, 5).plan(&p).unwrap_err(),
            Error::InfeasibleCalendar(_)
        ));
        assert!(RollingWindowSpec::years(2017, 2017, 5).plan(&p).is_ok());
        assert!(RollingWindowSpec::years(2017, 2018, 5).plan(&p).is_err());
    }
}
