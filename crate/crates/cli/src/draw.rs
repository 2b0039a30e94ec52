/// Pixel rectangle covered by a box: first and last column and row touched.
pub fn pixel_span(b: [f64; 4], width: u32, height: u32) -> Option<(u32, u32, u32, u32)> {
    if width == 0 || height == 0 {
        return None;
    }
    let lo = |v: f64, n: u32| (v.floor().max(0.0) as u32).min(n - 1);
    let hi = |v: f64, n: u32| ((v.ceil() - 1.0).max(0.0) as u32).min(n - 1);
    let (x0, y0, x1, y1) = (
        lo(b[0], width),
        lo(b[1], height),
        hi(b[2], width),
        hi(b[3], height),
    );
    (x0 <= x1 && y0 <= y1).then_some((x0, y0, x1, y1))
}

/// Burns a one-pixel outline of `b` into the image.
pub fn outline(img: &mut image::GrayImage, b: [f64; 4], value: u8) {
    let Some((x0, y0, x1, y1)) = pixel_span(b, img.width(), img.height()) else {
        return;
    };
    for x in x0..=x1 {
        img.put_pixel(x, y0, image::Luma([value]));
        img.put_pixel(x, y1, image::Luma([value]));
    }
    for y in y0..=y1 {
        img.put_pixel(x0, y, image::Luma([value]));
        img.put_pixel(x1, y, image::Luma([value]));
    }
}
