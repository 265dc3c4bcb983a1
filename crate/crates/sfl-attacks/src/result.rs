//! The attack outcome document written next to each run.

use serde::{Deserialize, Serialize};

/// Serialized as one JSON document per attack run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AttackResult {
    pub attack: String,
    /// Echo of the attack's configuration.
    pub config: serde_json::Value,
    pub queries_used: u64,
    /// Top-1 accuracy of the surrogate on the validation set, percent.
    pub accuracy: f64,
    /// Label agreement with the victim on the validation set, percent.
    pub fidelity: f64,
    pub seed: u64,
    pub wallclock_s: f64,
}

impl AttackResult {
    pub fn write_file(&self, path: &std::path::Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).expect("serializable");
        std::fs::write(path, json)
    }

    pub fn read_file(path: &std::path::Path) -> std::io::Result<AttackResult> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::other(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let r = AttackResult {
            attack: "craft".into(),
            config: serde_json::json!({"budget": 1000, "steps": 20}),
            queries_used: 980,
            accuracy: 81.25,
            fidelity: 88.5,
            seed: 7,
            wallclock_s: 1.5,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("result.json");
        r.write_file(&path).unwrap();
        assert_eq!(AttackResult::read_file(&path).unwrap(), r);
    }
}
