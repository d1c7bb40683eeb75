//! Compact edit syntax for the command line.
//!
//! ```text
//! remove:J
//! reorder:P,Q
//! drag:J,X,Y[,SCALE[,ROT]]
//! paste:SCENE#J,X,Y[,SCALE[,ROT]]
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use mpstack::service::{OpRequest, PlaneRef};
use mpstack::{PlaneId, Position, Transform2D};

#[derive(Clone, Debug, PartialEq)]
pub enum OpSpec {
    Remove(PlaneId),
    Reorder(PlaneId, PlaneId),
    Drag {
        plane: PlaneId,
        position: Position,
        transform: Transform2D,
    },
    /// Pastes plane `plane` of the scene at `scene`.
    Paste {
        scene: PathBuf,
        plane: PlaneId,
        position: Position,
        transform: Transform2D,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpSpecError(String);

impl fmt::Display for OpSpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for OpSpecError {}

fn err(spec: &str, why: impl fmt::Display) -> OpSpecError {
    OpSpecError(format!("bad op {spec:?}: {why}"))
}

fn plane(spec: &str, s: &str) -> Result<PlaneId, OpSpecError> {
    s.trim()
        .parse()
        .map(PlaneId)
        .map_err(|_| err(spec, format!("{s:?} is not a plane id")))
}

fn number(spec: &str, s: &str) -> Result<f64, OpSpecError> {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(err(spec, format!("{s:?} is not a number"))),
    }
}

/// `J,X,Y[,SCALE[,ROT]]`
fn placement(spec: &str, args: &str) -> Result<(PlaneId, Position, Transform2D), OpSpecError> {
    let parts: Vec<&str> = args.split(',').collect();
    if !(3..=5).contains(&parts.len()) {
        return Err(err(spec, "expected J,X,Y[,SCALE[,ROT]]"));
    }
    let position = Position {
        x: number(spec, parts[1])?,
        y: number(spec, parts[2])?,
    };
    let mut transform = Transform2D::identity();
    if let Some(s) = parts.get(3) {
        transform.scale = number(spec, s)?;
    }
    if let Some(r) = parts.get(4) {
        transform.rotation_deg = number(spec, r)?;
    }
    Ok((plane(spec, parts[0])?, position, transform))
}

impl FromStr for OpSpec {
    type Err = OpSpecError;

    fn from_str(spec: &str) -> Result<Self, Self::Err> {
        let (name, args) = spec.split_once(':').ok_or_else(|| err(spec, "expected NAME:ARGS"))?;
        match name {
            "remove" => Ok(OpSpec::Remove(plane(spec, args)?)),
            "reorder" => {
                let (p, q) = args.split_once(',').ok_or_else(|| err(spec, "expected P,Q"))?;
                Ok(OpSpec::Reorder(plane(spec, p)?, plane(spec, q)?))
            }
            "drag" => {
                let (plane, position, transform) = placement(spec, args)?;
                Ok(OpSpec::Drag {
                    plane,
                    position,
                    transform,
                })
            }
            "paste" => {
                let (scene, rest) = args.rsplit_once('#').ok_or_else(|| err(spec, "expected SCENE#J,X,Y"))?;
                if scene.is_empty() {
                    return Err(err(spec, "empty scene path"));
                }
                let (plane, position, transform) = placement(spec, rest)?;
                Ok(OpSpec::Paste {
                    scene: PathBuf::from(scene),
                    plane,
                    position,
                    transform,
                })
            }
            other => Err(err(spec, format!("unknown op {other:?}"))),
        }
    }
}

impl OpSpec {
    /// Scene that must be loaded as a source session first, if any.
    pub fn source_scene(&self) -> Option<&PathBuf> {
        match self {
            OpSpec::Paste { scene, .. } => Some(scene),
            _ => None,
        }
    }

    /// `source_session` is the session holding [`OpSpec::source_scene`].
    pub fn to_request(&self, source_session: Option<&str>) -> OpRequest {
        match self.clone() {
            OpSpec::Remove(plane) => OpRequest::Remove { plane },
            OpSpec::Reorder(p, q) => OpRequest::Reorder { p, q },
            OpSpec::Drag {
                plane,
                position,
                transform,
            } => OpRequest::Drag {
                plane,
                position,
                transform,
            },
            OpSpec::Paste {
                plane,
                position,
                transform,
                ..
            } => OpRequest::DragAcross {
                source: PlaneRef {
                    scene: source_session.unwrap_or_default().to_string(),
                    plane,
                },
                position,
                transform,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_each_form() {
        assert_eq!("remove:3".parse(), Ok(OpSpec::Remove(PlaneId(3))));
        assert_eq!("reorder:0, 2".parse(), Ok(OpSpec::Reorder(PlaneId(0), PlaneId(2))));
        let drag: OpSpec = "drag:1,10.5,-4,0.5,30".parse().unwrap();
        assert_eq!(
            drag,
            OpSpec::Drag {
                plane: PlaneId(1),
                position: Position { x: 10.5, y: -4.0 },
                transform: Transform2D {
                    scale: 0.5,
                    rotation_deg: 30.0,
                    ..Transform2D::identity()
                },
            }
        );
        let paste: OpSpec = "paste:scenes/a#b/manifest.json#2,3,4".parse().unwrap();
        assert_eq!(paste.source_scene(), Some(&PathBuf::from("scenes/a#b/manifest.json")));
    }

    #[test]
    fn rejects_malformed_specs() {
        for bad in [
            "remove",
            "remove:x",
            "reorder:1",
            "drag:1,2",
            "drag:1,2,3,4,5,6",
            "drag:1,nan,3",
            "paste:#1,2,3",
            "paste:a,1,2",
            "blur:1",
        ] {
            assert!(bad.parse::<OpSpec>().is_err(), "{bad}");
        }
    }
}
