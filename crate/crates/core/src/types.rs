use std::fmt;
use std::str::FromStr;

/// Identifier of a cognitive-radio node. Unique within a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u16);

/// Index into the scenario's list of licensed channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChannelId(pub u16);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// Traffic class of queued data, ordered by urgency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DataType {
    TextFile,
    RealTimeAV,
    ControlData,
    SafetyCritical,
}

impl DataType {
    pub const ALL: [DataType; 4] = [
        DataType::TextFile,
        DataType::RealTimeAV,
        DataType::ControlData,
        DataType::SafetyCritical,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DataType::TextFile => "text",
            DataType::RealTimeAV => "realtime",
            DataType::ControlData => "control",
            DataType::SafetyCritical => "safety",
        }
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DataType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "text" => Ok(DataType::TextFile),
            "realtime" => Ok(DataType::RealTimeAV),
            "control" => Ok(DataType::ControlData),
            "safety" => Ok(DataType::SafetyCritical),
            other => Err(format!(
                "unknown data type `{other}` (expected text, realtime, control or safety)"
            )),
        }
    }
}

/// Index of a traffic flow in the scenario's flow list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowId(pub u16);

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.0)
    }
}
