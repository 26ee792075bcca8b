use crate::data::ImageBuffer;

/// Deterministic 8-bit test card: low-frequency colour waves, a bright
/// rectangle, a dark disk and concentric rings with hard edges.
pub fn test_card(height: usize, width: usize) -> ImageBuffer {
    let (sy, sx) = (height as f32 / 64.0, width as f32 / 64.0);
    ImageBuffer::from_fn(height.max(1), width.max(1), |y, x, c| {
        let (fy, fx) = (y as f32 / sy, x as f32 / sx);
        let base = 0.5 + 0.25 * ((fx * 0.35 + c as f32).sin() * (fy * 0.22).cos());
        let rect = if (16.0..40.0).contains(&fy) && (20.0..48.0).contains(&fx) { 0.2 } else { 0.0 };
        let disk = if (fx - 44.0).powi(2) + (fy - 46.0).powi(2) < 100.0 { -0.25 } else { 0.0 };
        let radius = ((fx - 20.0).powi(2) + (fy - 44.0).powi(2)).sqrt() as i32;
        let ring = if radius % 6 < 3 { 0.15 } else { -0.1 };
        (base + rect + disk + ring).clamp(0.0, 1.0)
    })
    .expect("non-empty image")
    .to_u8()
}
