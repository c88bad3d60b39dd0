use serde_json::{json, Value};

/// Failure of a CLI run. Exit codes: 1 I/O, 2 domain precondition or bad
/// configuration, 3 solver non-convergence.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Io(String),
    Config(String),
    Domain(scorekit::Error),
    Unbounded(String),
    NotConverged(String),
}

impl From<scorekit::Error> for CliError {
    fn from(e: scorekit::Error) -> Self {
        match e {
            scorekit::Error::Io(m) => CliError::Io(m),
            other => CliError::Domain(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) | CliError::Domain(_) | CliError::Unbounded(_) => 2,
            CliError::NotConverged(_) => 3,
        }
    }

    fn kind(&self) -> String {
        match self {
            CliError::Io(_) => "Io".into(),
            CliError::Config(_) => "InvalidConfig".into(),
            CliError::Unbounded(_) => "Unbounded".into(),
            CliError::NotConverged(_) => "NotConverged".into(),
            CliError::Domain(e) => {
                let dbg = format!("{e:?}");
                dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Domain").to_string()
            }
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Io(m) | CliError::Config(m) | CliError::Unbounded(m) | CliError::NotConverged(m) => m.clone(),
            CliError::Domain(e) => e.to_string(),
        }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "error": self.kind(),
            "message": self.message(),
            "exit_code": self.exit_code(),
        })
    }
}
