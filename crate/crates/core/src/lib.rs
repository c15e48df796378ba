//! Blind single-channel separation of heart and lung sounds.

/// `as_str`, `Display` and `FromStr` for a fieldless enum spelled as keywords.
macro_rules! keyword_enum {
    ($ty:ty, $($variant:path => $name:literal),+) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($variant => $name),+ }
            }
        }
        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl std::str::FromStr for $ty {
            type Err = $crate::Error;
            fn from_str(s: &str) -> $crate::Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    _ => Err($crate::Error::InvalidConfig(format!(
                        "unknown value `{s}` (expected {})", [$($name),+].join(" or ")
                    ))),
                }
            }
        }
    };
}

pub mod error;
pub mod evaluation;
pub mod factorization;
pub mod neuralnet;
pub mod separation;
pub mod signal_io;
pub mod spectral;
pub mod synthetic;

pub use error::{Error, Result};
