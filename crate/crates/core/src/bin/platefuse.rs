fn main() {
    platefuse::cli_main()
}
