//! SVG 1.1 face drawing driven by the 8 face attributes.

use std::fmt::Write;

use super::attr::*;

pub const DEFAULT_FACE_SIZE: u32 = 256;

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Maps `x ∈ [-1, 1]` to `[0, 1]`.
fn unit(x: f64) -> f64 {
    (x.clamp(-1.0, 1.0) + 1.0) / 2.0
}

fn mix_rgb(a: [u8; 3], b: [u8; 3], t: f64) -> String {
    let c = |i: usize| lerp(a[i] as f64, b[i] as f64, t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(0), c(1), c(2))
}

/// Renders clamped face attributes; identical input gives identical bytes.
pub fn render_face(attrs: &[f64], size: u32) -> String {
    let a = |k: usize| attrs.get(k).copied().unwrap_or(0.0).clamp(-1.0, 1.0);
    let s = size as f64;
    let (cx, cy) = (s / 2.0, s * 0.54);
    let rx = s * lerp(0.26, 0.32, unit(a(AGE)));
    let ry = s * 0.34;

    let skin = mix_rgb([0xf6, 0xdc, 0xc8], [0x8d, 0x5a, 0x3c], unit(a(SKIN_TONE)));
    let hair = mix_rgb([0xf0, 0xd0, 0x6a], [0x1a, 0x14, 0x10], unit(a(HAIR_COLOR)));
    let hair_drop = s * lerp(0.02, 0.42, unit(a(HAIR_LENGTH)));
    let glasses = a(GLASSES).max(0.0);
    let beard = a(BEARD).max(0.0);
    let hat = a(HAT).max(0.0);
    let smile = a(SMILE);
    let wrinkles = (3.0 * a(AGE).max(0.0)).round() as usize;

    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    let _ = writeln!(out, r##"<rect width="{s}" height="{s}" fill="#eef1f5"/>"##);

    // hair behind the face; its lower edge drops with hair length
    let top = cy - ry - s * 0.04;
    let _ = writeln!(
        out,
        r#"<path id="hair" d="M {:.2} {:.2} Q {:.2} {:.2} {:.2} {:.2} L {:.2} {:.2} L {:.2} {:.2} Z" fill="{hair}"/>"#,
        cx - rx - s * 0.04,
        cy - ry * 0.2,
        cx,
        top - s * 0.12,
        cx + rx + s * 0.04,
        cy - ry * 0.2,
        cx + rx + s * 0.04,
        cy - ry * 0.2 + hair_drop,
        cx - rx - s * 0.04,
        cy - ry * 0.2 + hair_drop,
    );
    let _ = writeln!(
        out,
        r##"<ellipse id="face" cx="{cx:.2}" cy="{cy:.2}" rx="{rx:.2}" ry="{ry:.2}" fill="{skin}" stroke="#5a4030" stroke-width="2"/>"##
    );

    let eye_y = cy - ry * 0.15;
    let eye_dx = rx * 0.42;
    for sx in [-1.0, 1.0] {
        let _ = writeln!(
            out,
            r##"<circle cx="{:.2}" cy="{eye_y:.2}" r="{:.2}" fill="#2b2b2b"/>"##,
            cx + sx * eye_dx,
            s * 0.018
        );
    }

    let _ = writeln!(
        out,
        r##"<g id="wrinkles" stroke="#7a5a48" stroke-width="1.5" fill="none">"##
    );
    for i in 0..wrinkles {
        let y = cy - ry * 0.55 + i as f64 * s * 0.025;
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}"/>"#,
            cx - rx * 0.35,
            cx + rx * 0.35
        );
    }
    let _ = writeln!(out, "</g>");

    // mouth: control point below the corners for a smile, above for a frown
    let mouth_y = cy + ry * 0.45;
    let _ = writeln!(
        out,
        r##"<path id="mouth" d="M {:.2} {mouth_y:.2} Q {cx:.2} {:.2} {:.2} {mouth_y:.2}" stroke="#8a2c2c" stroke-width="3" fill="none"/>"##,
        cx - rx * 0.35,
        mouth_y + smile * s * 0.06,
        cx + rx * 0.35,
    );

    let _ = writeln!(
        out,
        r##"<path id="beard" d="M {:.2} {:.2} Q {cx:.2} {:.2} {:.2} {:.2}" stroke="{hair}" stroke-width="{:.2}" fill="none" stroke-linecap="round"/>"##,
        cx - rx * 0.8,
        cy + ry * 0.35,
        cy + ry * 1.15,
        cx + rx * 0.8,
        cy + ry * 0.35,
        beard * s * 0.08,
    );

    let _ = writeln!(
        out,
        r##"<g id="glasses" opacity="{glasses:.3}" stroke="#202020" stroke-width="3" fill="none">"##
    );
    for sx in [-1.0, 1.0] {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{eye_y:.2}" r="{:.2}"/>"#,
            cx + sx * eye_dx,
            s * 0.06
        );
    }
    let _ = writeln!(
        out,
        r#"<line x1="{:.2}" y1="{eye_y:.2}" x2="{:.2}" y2="{eye_y:.2}"/>"#,
        cx - eye_dx + s * 0.06,
        cx + eye_dx - s * 0.06
    );
    let _ = writeln!(out, "</g>");

    let _ = writeln!(
        out,
        r##"<rect id="hat" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#3b4a8c" opacity="{hat:.3}"/>"##,
        cx - rx * 1.1,
        top - s * 0.08,
        rx * 2.2,
        s * 0.14,
    );
    let _ = writeln!(out, "</svg>");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attrs() -> Vec<f64> {
        vec![0.2, -0.4, 0.9, 0.1, 0.7, -0.3, -1.0, 0.5]
    }

    #[test]
    fn deterministic_bytes() {
        assert_eq!(render_face(&attrs(), 256), render_face(&attrs(), 256));
    }

    #[test]
    fn hidden_glasses_have_zero_opacity() {
        let mut a = attrs();
        a[GLASSES] = -1.0;
        let svg = render_face(&a, 256);
        assert!(svg.contains(r#"<g id="glasses" opacity="0.000""#));
    }

    #[test]
    fn hair_color_changes_fill() {
        let mut a = attrs();
        a[HAIR_COLOR] = -1.0;
        let blond = render_face(&a, 256);
        a[HAIR_COLOR] = 1.0;
        let black = render_face(&a, 256);
        assert!(blond.contains(r##"fill="#f0d06a""##));
        assert!(black.contains(r##"fill="#1a1410""##));
    }

    #[test]
    fn wrinkle_count_follows_age() {
        let mut a = attrs();
        a[AGE] = 1.0;
        assert_eq!(render_face(&a, 256).matches("<line x1").count(), 3 + 1);
        a[AGE] = -0.5;
        assert_eq!(render_face(&a, 256).matches("<line x1").count(), 1);
    }
}
