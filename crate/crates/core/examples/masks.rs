//! Binary masks, COCO run-length encoding and polygons.
//!
//! ```text
//! cargo run --example masks
//! ```

use surgseg::mask::{polygon_to_rle, BBox, BinaryMask, Rle};

fn main() -> anyhow::Result<()> {
    let square = BinaryMask::rect(
        12,
        8,
        BBox {
            x_min: 2,
            y_min: 1,
            x_max: 6,
            y_max: 5,
        },
    );
    let rle = square.to_rle();
    println!("square area {} rle counts {:?}", square.area(), rle.counts);
    println!("compressed counts {:?}", rle.to_coco_string());
    assert_eq!(BinaryMask::from_rle(&rle)?, square);

    let decoded = Rle::from_coco_string(&rle.to_coco_string(), 12, 8)?;
    assert_eq!(decoded, rle);

    let triangle = BinaryMask::from_rle(&polygon_to_rle(&[1.0, 1.0, 10.0, 1.0, 1.0, 7.0], 12, 8))?;
    println!("triangle area {} bbox {:?}", triangle.area(), triangle.bbox());
    println!("iou(square, triangle) = {:.3}", square.iou(&triangle)?);

    let both = square.union(&triangle.translate(0, 0))?;
    println!("union has {} connected region(s)", both.regions().len());
    for y in 0..both.height() {
        let row: String = (0..both.width()).map(|x| if both.get(x, y) { '#' } else { '.' }).collect();
        println!("  {row}");
    }
    Ok(())
}
