use serde::{Deserialize, Serialize};

/// Hourly compensation paid in the original benchmark study, in US dollars.
pub const REFERENCE_HOURLY_RATE: f64 = 9.92;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostQuery {
    pub n_participants: usize,
    pub tasks_per_participant: usize,
    pub avg_task_seconds: f64,
    /// Consent, instructions and survey time per participant.
    pub overhead_minutes: f64,
    pub hourly_rate: f64,
    /// Platform fee as a fraction of participant pay.
    #[serde(default)]
    pub platform_fee_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub minutes_per_participant: f64,
    pub participant_hours: f64,
    pub compensation: f64,
    pub platform_fee: f64,
    pub total: f64,
}

impl CostQuery {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("avg_task_seconds", self.avg_task_seconds),
            ("overhead_minutes", self.overhead_minutes),
            ("hourly_rate", self.hourly_rate),
            ("platform_fee_fraction", self.platform_fee_fraction),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        Ok(())
    }
}

pub fn estimate_cost(q: &CostQuery) -> CostBreakdown {
    let minutes = q.tasks_per_participant as f64 * q.avg_task_seconds / 60.0 + q.overhead_minutes;
    let hours = q.n_participants as f64 * minutes / 60.0;
    let compensation = hours * q.hourly_rate;
    let platform_fee = compensation * q.platform_fee_fraction;
    CostBreakdown {
        minutes_per_participant: minutes,
        participant_hours: hours,
        compensation,
        platform_fee,
        total: compensation + platform_fee,
    }
}

impl CostBreakdown {
    pub fn to_text(&self) -> String {
        format!(
            "minutes per participant: {:.2}\nparticipant hours: {:.2}\ncompensation: {:.2}\n\
             platform fee: {:.2}\ntotal: {:.2}\n",
            self.minutes_per_participant, self.participant_hours, self.compensation, self.platform_fee, self.total
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn query(n: usize, fee: f64) -> CostQuery {
        CostQuery {
            n_participants: n,
            tasks_per_participant: 20,
            avg_task_seconds: 6.0,
            overhead_minutes: 8.0,
            hourly_rate: REFERENCE_HOURLY_RATE,
            platform_fee_fraction: fee,
        }
    }

    #[test]
    fn thirty_participants_at_published_rate() {
        let c = estimate_cost(&query(30, 0.0));
        assert!((c.minutes_per_participant - 10.0).abs() < 1e-12);
        assert!((c.total - 49.60).abs() < 1e-9, "{}", c.total);
        assert_eq!(estimate_cost(&query(0, 0.0)).total, 0.0);
        let fee = estimate_cost(&query(30, 0.33));
        assert!((fee.total - 1.33 * c.total).abs() < 1e-9);
    }

    #[test]
    fn linear_in_participants() {
        let one = estimate_cost(&query(1, 0.1)).total;
        assert!((estimate_cost(&query(154, 0.1)).total - 154.0 * one).abs() < 1e-9);
        assert!(query(1, -0.5).validate().is_err());
    }
}
