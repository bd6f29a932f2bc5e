//! Train/test view selection for the standard benchmarks.

use fieldforge::scenes::{select_views, Protocol};

fn main() {
    let cases = [
        ("blender", 100, 8, Protocol::Blender { test_images: 200 }),
        ("dtu", 49, 3, Protocol::Dtu),
        ("dtu", 49, 6, Protocol::Dtu),
        ("dtu", 49, 9, Protocol::Dtu),
        ("llff", 40, 3, Protocol::Llff),
        ("explicit", 10, 2, Protocol::Explicit(vec![4, 7])),
    ];
    for (name, images, n, protocol) in cases {
        let split = select_views(images, n, &protocol).unwrap();
        println!("{name:8} {n} views  train {:?}", split.train);
        println!("{:8}          test  {:?}", "", split.test);
    }
}
