//! Unary hyperdimensional computing.
//!
//! Images are encoded by comparing each pixel against per-position Sobol
//! thresholds (`uhd`) or by binding random position and level hypervectors
//! (baseline), bundled into per-class prototypes and classified by similarity.

/// Display/FromStr for fieldless enums via fixed lowercase names.
macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$variant => $name),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " '{}', expected one of: ", $($name, " "),+),
                        s
                    ))),
                }
            }
        }
    };
}

pub mod data;
pub mod encoders;
pub mod error;
pub mod hypervector;
pub mod model;
pub mod sobol;
pub mod unary;

pub use error::{Error, Result};
