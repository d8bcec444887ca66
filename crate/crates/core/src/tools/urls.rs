//! Relative links into the service's results routes.
//!
//! | kind            | route                                              |
//! |-----------------|----------------------------------------------------|
//! | single register | `/results/register?cohort=K1[&report=R]`           |
//! | profile         | `/results/profile?den=K1[&category=CAT]`           |
//! | comparison      | `/results/compare?num=K2&den=K1&by=district`       |
//! | kpi             | `/results/kpi?kpi=KPI&loc=LOC`                     |
//! | workflow        | `/results/workflow?riskset=RS`                     |

use serde::{Deserialize, Serialize};
use url::form_urlencoded;

use crate::catalog::Grouping;
use crate::ehr::{ExecError, ExecutionLayer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResultsLink {
    SingleRegister {
        cohort: String,
        report: Option<String>,
    },
    Profile {
        denominator: String,
        category: Option<String>,
    },
    Compare {
        numerator: String,
        denominator: String,
        by: Grouping,
    },
    Kpi {
        kpi: String,
        location: String,
    },
    Workflow {
        riskset: String,
    },
}

fn build(path: &str, params: &[(&str, &str)]) -> String {
    let mut q = form_urlencoded::Serializer::new(String::new());
    for (k, v) in params {
        q.append_pair(k, v);
    }
    format!("{path}?{}", q.finish())
}

impl ResultsLink {
    /// Check every referenced id against the execution layer.
    pub fn validate(&self, exec: &ExecutionLayer) -> Result<(), ExecError> {
        let catalog = exec.catalog();
        match self {
            ResultsLink::SingleRegister { cohort, report } => {
                exec.cohort(cohort)?;
                if let Some(r) = report {
                    catalog
                        .report(r)
                        .ok_or_else(|| ExecError::UnknownReport(r.clone()))?;
                }
            }
            ResultsLink::Profile {
                denominator,
                category,
            } => {
                exec.cohort(denominator)?;
                if let Some(c) = category {
                    catalog
                        .category(c)
                        .ok_or_else(|| ExecError::UnknownCategory(c.clone()))?;
                }
            }
            ResultsLink::Compare {
                numerator,
                denominator,
                ..
            } => {
                exec.cohort(numerator)?;
                exec.cohort(denominator)?;
            }
            ResultsLink::Kpi { kpi, location } => {
                catalog
                    .kpi(kpi)
                    .ok_or_else(|| ExecError::UnknownKpi(kpi.clone()))?;
                catalog
                    .kpi_population(location)
                    .ok_or_else(|| ExecError::UnknownLocation(location.clone()))?;
            }
            ResultsLink::Workflow { riskset } => {
                catalog
                    .riskset(riskset)
                    .ok_or_else(|| ExecError::UnknownRiskset(riskset.clone()))?;
            }
        }
        Ok(())
    }

    pub fn to_url(&self) -> String {
        match self {
            ResultsLink::SingleRegister { cohort, report } => {
                let mut p = vec![("cohort", cohort.as_str())];
                if let Some(r) = report {
                    p.push(("report", r));
                }
                build("/results/register", &p)
            }
            ResultsLink::Profile {
                denominator,
                category,
            } => {
                let mut p = vec![("den", denominator.as_str())];
                if let Some(c) = category {
                    p.push(("category", c));
                }
                build("/results/profile", &p)
            }
            ResultsLink::Compare {
                numerator,
                denominator,
                by,
            } => build(
                "/results/compare",
                &[("num", numerator), ("den", denominator), ("by", by.as_str())],
            ),
            ResultsLink::Kpi { kpi, location } => {
                build("/results/kpi", &[("kpi", kpi), ("loc", location)])
            }
            ResultsLink::Workflow { riskset } => build("/results/workflow", &[("riskset", riskset)]),
        }
    }
}

/// Validate and render in one step.
pub fn create_results_url(link: &ResultsLink, exec: &ExecutionLayer) -> Result<String, ExecError> {
    link.validate(exec)?;
    Ok(link.to_url())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets;

    #[test]
    fn formats() {
        let reg = ResultsLink::SingleRegister {
            cohort: "K1".into(),
            report: None,
        };
        assert_eq!(reg.to_url(), "/results/register?cohort=K1");
        let prof = ResultsLink::Profile {
            denominator: "K1".into(),
            category: None,
        };
        assert_eq!(prof.to_url(), "/results/profile?den=K1");
        let cmp = ResultsLink::Compare {
            numerator: "K2".into(),
            denominator: "K1".into(),
            by: Grouping::District,
        };
        assert_eq!(cmp.to_url(), "/results/compare?num=K2&den=K1&by=district");
        assert_eq!(
            ResultsLink::Workflow {
                riskset: "RS-MEDREVIEW".into()
            }
            .to_url(),
            "/results/workflow?riskset=RS-MEDREVIEW"
        );
        assert_eq!(
            ResultsLink::Kpi {
                kpi: "KPI-SMOKING".into(),
                location: "LOC-DISTRICTS".into()
            }
            .to_url(),
            "/results/kpi?kpi=KPI-SMOKING&loc=LOC-DISTRICTS"
        );
        assert_eq!(reg.to_url(), reg.clone().to_url());
    }

    #[test]
    fn validation_names_the_missing_id() {
        let exec = assets::demo_execution();
        let reg = ResultsLink::SingleRegister {
            cohort: "K1".into(),
            report: None,
        };
        assert!(matches!(reg.validate(&exec), Err(ExecError::UnknownCohort(_))));
        exec.create_cohort("C-DM2", None).unwrap();
        assert_eq!(create_results_url(&reg, &exec).unwrap(), "/results/register?cohort=K1");
        let bad_report = ResultsLink::SingleRegister {
            cohort: "K1".into(),
            report: Some("R-NOPE".into()),
        };
        assert!(matches!(bad_report.validate(&exec), Err(ExecError::UnknownReport(_))));
        let bad_rs = ResultsLink::Workflow {
            riskset: "RS-NOPE".into(),
        };
        assert!(matches!(bad_rs.validate(&exec), Err(ExecError::UnknownRiskset(_))));
    }
}
