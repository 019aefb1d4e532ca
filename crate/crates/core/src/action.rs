//! The four kinds of operator action.

use std::fmt;

/// A single operator intervention. Every variant touches at most one substation.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    DoNothing,
    /// Move element slots of one substation to the other bus bar. Bit `i` of
    /// `mask` set means the `i`-th slot of the substation (in slot order)
    /// switches bus; applying the same action twice restores the layout.
    SwitchBus { substation: usize, mask: u32 },
    SetLineStatus { line: usize, connect: bool },
    /// Shift a dispatchable generator's setpoint by `delta_mw`.
    Redispatch { generator: usize, delta_mw: f64 },
}

impl Action {
    pub fn is_do_nothing(&self) -> bool {
        matches!(self, Action::DoNothing)
    }

    pub fn is_topological(&self) -> bool {
        matches!(self, Action::SwitchBus { .. } | Action::SetLineStatus { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Action::DoNothing => "do-nothing",
            Action::SwitchBus { .. } => "bus-switch",
            Action::SetLineStatus { .. } => "line-status",
            Action::Redispatch { .. } => "redispatch",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::DoNothing => write!(f, "do nothing"),
            Action::SwitchBus { substation, mask } => {
                write!(f, "substation {substation} switch {mask:#b}")
            }
            Action::SetLineStatus { line, connect: true } => write!(f, "reconnect line {line}"),
            Action::SetLineStatus { line, connect: false } => write!(f, "disconnect line {line}"),
            Action::Redispatch { generator, delta_mw } => {
                write!(f, "redispatch generator {generator} by {delta_mw:+} MW")
            }
        }
    }
}
