use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                $name::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str() == s)
                    .ok_or_else(|| format!("unknown {} {s:?}", stringify!($name).to_lowercase()))
            }
        }
    };
}

named_enum!(
    /// Named palette entries.
    Color {
        Red => "red",
        Green => "green",
        Blue => "blue",
        Yellow => "yellow",
        Cyan => "cyan",
        Magenta => "magenta",
        Orange => "orange",
        Purple => "purple",
    }
);

named_enum!(Shape {
    Circle => "circle",
    Square => "square",
    Triangle => "triangle",
    Star => "star",
});

named_enum!(Size {
    Small => "small",
    Medium => "medium",
    Large => "large",
});

named_enum!(Texture {
    Solid => "solid",
    Striped => "striped",
});

impl Color {
    pub fn rgb8(self) -> [u8; 3] {
        match self {
            Color::Red => [220, 30, 30],
            Color::Green => [30, 180, 40],
            Color::Blue => [30, 60, 220],
            Color::Yellow => [235, 215, 30],
            Color::Cyan => [30, 200, 210],
            Color::Magenta => [210, 40, 200],
            Color::Orange => [245, 140, 20],
            Color::Purple => [120, 40, 160],
        }
    }
}

impl Size {
    /// Target object area as a fraction of the image area.
    pub fn area_fraction(self) -> f64 {
        match self {
            Size::Small => 0.02,
            Size::Medium => 0.05,
            Size::Large => 0.10,
        }
    }
}

/// Full attribute assignment of one generated object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Appearance {
    pub color: Color,
    pub shape: Shape,
    pub size: Size,
    pub texture: Texture,
}

impl Appearance {
    pub fn to_map(self) -> usersod_core::AttributeMap {
        use usersod_core::Attribute;
        [
            (Attribute::Color, self.color.to_string()),
            (Attribute::Shape, self.shape.to_string()),
            (Attribute::Size, self.size.to_string()),
            (Attribute::Texture, self.texture.to_string()),
        ]
        .into_iter()
        .collect()
    }
}
