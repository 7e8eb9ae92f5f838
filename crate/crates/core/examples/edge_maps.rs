//! Sobel and Canny edge maps of a phantom, written as 16-bit PGM files.

use eamri::edge::{canny_edges, sobel_edges};
use eamri::harness::dataset::CANNY_THRESHOLDS;
use eamri::harness::image::write_pgm16;
use eamri::harness::{generate_phantom, PhantomSpec};

fn main() -> eamri::Result<()> {
    let img = generate_phantom(&PhantomSpec { size: 64, ..PhantomSpec::default() })?.abs();
    let sobel = sobel_edges(&img)?;
    let canny = canny_edges(&img, CANNY_THRESHOLDS.0, CANNY_THRESHOLDS.1)?;
    let dir = std::env::temp_dir();
    write_pgm16(&dir.join("eamri-phantom.pgm"), &img, img.max())?;
    write_pgm16(&dir.join("eamri-sobel.pgm"), &sobel, 1.0)?;
    write_pgm16(&dir.join("eamri-canny.pgm"), &canny, 1.0)?;
    let count = |t: &eamri::tensor::RealTensor| t.data().iter().filter(|&&v| v > 0.1).count();
    println!("sobel pixels above 0.1: {}", count(&sobel));
    println!("canny edge pixels:      {}", count(&canny));
    println!("images written to {}", dir.display());
    Ok(())
}
