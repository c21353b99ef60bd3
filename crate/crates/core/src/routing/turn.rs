use std::collections::BTreeSet;
use std::fmt;

use super::RoutingError;
use crate::topology::{Direction, Topology};

use Direction::{D, E, N, S, U, W};

/// Fixed order of the eight planar turn-health slots, as
/// `(input port, output port)`.
pub const PLANAR_TURN_SLOTS: [(Direction, Direction); 8] = [
    (N, E),
    (N, W),
    (S, E),
    (S, W),
    (E, N),
    (E, S),
    (W, N),
    (W, S),
];

const SPATIAL_TURN_SLOTS: [(Direction, Direction); 24] = [
    (N, E),
    (N, W),
    (S, E),
    (S, W),
    (E, N),
    (E, S),
    (W, N),
    (W, S),
    (U, N),
    (U, E),
    (U, W),
    (U, S),
    (D, N),
    (D, E),
    (D, W),
    (D, S),
    (N, U),
    (N, D),
    (E, U),
    (E, D),
    (W, U),
    (W, D),
    (S, U),
    (S, D),
];

/// Turn-health slot layout of a router: 8 slots in 2D, 24 in 3D.
pub fn turn_slots(topology: &Topology) -> &'static [(Direction, Direction)] {
    if topology.is_3d() {
        &SPATIAL_TURN_SLOTS
    } else {
        &PLANAR_TURN_SLOTS
    }
}

fn is_turn(input: Direction, output: Direction) -> bool {
    input != Direction::L
        && output != Direction::L
        && input != output
        && input.opposite() != output
}

/// A routing algorithm expressed as its set of allowed 90-degree turns.
/// Ports are named by the router side: `(W, N)` is a packet that entered
/// through the west input (travelling east) and leaves through the north
/// output.
///
/// Straight-through and local connections are not turns and are always
/// permitted.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TurnModel {
    name: String,
    allowed: BTreeSet<(Direction, Direction)>,
}

/// Planar-to-vertical turns only: the vertical hop is taken last, which keeps
/// every 2D model deadlock free and connected when stacked.
const VERTICAL_LAST: [(Direction, Direction); 8] = [
    (N, U),
    (N, D),
    (E, U),
    (E, D),
    (W, U),
    (W, D),
    (S, U),
    (S, D),
];

impl TurnModel {
    fn named(name: &str, planar: &[(Direction, Direction)]) -> TurnModel {
        TurnModel {
            name: name.to_string(),
            allowed: planar.iter().chain(VERTICAL_LAST.iter()).copied().collect(),
        }
    }

    /// Dimension-ordered routing: horizontal first, then vertical.
    pub fn xy() -> TurnModel {
        TurnModel::named("xy", &[(E, N), (E, S), (W, N), (W, S)])
    }

    pub fn west_first() -> TurnModel {
        TurnModel::named(
            "west-first",
            &[(N, E), (S, E), (E, N), (E, S), (W, N), (W, S)],
        )
    }

    pub fn north_last() -> TurnModel {
        TurnModel::named(
            "north-last",
            &[(N, E), (N, W), (E, N), (E, S), (W, N), (W, S)],
        )
    }

    pub fn negative_first() -> TurnModel {
        TurnModel::named(
            "negative-first",
            &[(N, E), (N, W), (S, E), (E, N), (E, S), (W, N)],
        )
    }

    /// Every turn allowed. Not deadlock free; useful as a negative control.
    pub fn fully_adaptive() -> TurnModel {
        TurnModel {
            name: "fully-adaptive".to_string(),
            allowed: SPATIAL_TURN_SLOTS.iter().copied().collect(),
        }
    }

    /// The four deadlock-free models shipped with the crate.
    pub fn standard() -> Vec<TurnModel> {
        vec![
            TurnModel::xy(),
            TurnModel::west_first(),
            TurnModel::north_last(),
            TurnModel::negative_first(),
        ]
    }

    pub fn custom(
        name: &str,
        turns: &[(Direction, Direction)],
    ) -> Result<TurnModel, RoutingError> {
        let mut allowed = BTreeSet::new();
        for &(i, o) in turns {
            if !is_turn(i, o) {
                return Err(RoutingError::InvalidTurn(i, o));
            }
            allowed.insert((i, o));
        }
        Ok(TurnModel {
            name: name.to_string(),
            allowed,
        })
    }

    pub fn from_name(name: &str) -> Result<TurnModel, RoutingError> {
        let key = name.trim().to_ascii_lowercase().replace('_', "-");
        match key.as_str() {
            "xy" | "xyz" => Ok(TurnModel::xy()),
            "west-first" => Ok(TurnModel::west_first()),
            "north-last" => Ok(TurnModel::north_last()),
            "negative-first" => Ok(TurnModel::negative_first()),
            "fully-adaptive" => Ok(TurnModel::fully_adaptive()),
            _ => Err(RoutingError::UnknownTurnModel(name.to_string())),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn allows(&self, input: Direction, output: Direction) -> bool {
        self.allowed.contains(&(input, output))
    }

    pub fn turns(&self) -> impl Iterator<Item = (Direction, Direction)> + '_ {
        self.allowed.iter().copied()
    }
}

impl fmt::Display for TurnModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_tables_hold_only_turns() {
        assert!(SPATIAL_TURN_SLOTS.iter().all(|&(i, o)| is_turn(i, o)));
        let unique: BTreeSet<_> = SPATIAL_TURN_SLOTS.iter().collect();
        assert_eq!(unique.len(), 24);
        assert_eq!(&SPATIAL_TURN_SLOTS[..8], &PLANAR_TURN_SLOTS);
    }

    #[test]
    fn xy_forbids_vertical_to_horizontal() {
        let xy = TurnModel::xy();
        for &(i, o) in &PLANAR_TURN_SLOTS {
            let vertical_in = matches!(i, N | S);
            assert_eq!(xy.allows(i, o), !vertical_in, "{i}->{o}");
        }
    }

    #[test]
    fn each_partially_adaptive_model_forbids_two_turns() {
        for m in [
            TurnModel::west_first(),
            TurnModel::north_last(),
            TurnModel::negative_first(),
        ] {
            let n = PLANAR_TURN_SLOTS
                .iter()
                .filter(|&&(i, o)| m.allows(i, o))
                .count();
            assert_eq!(n, 6, "{m}");
        }
    }

    #[test]
    fn custom_rejects_non_turns() {
        assert_eq!(
            TurnModel::custom("bad", &[(E, W)]),
            Err(RoutingError::InvalidTurn(E, W))
        );
        assert!(TurnModel::custom("ok", &[(E, N)]).is_ok());
        assert!(TurnModel::from_name("West_First").is_ok());
        assert!(TurnModel::from_name("odd-even").is_err());
    }
}
