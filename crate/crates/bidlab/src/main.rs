fn main() {
    println!("bidlab");
}
