class E { String s = "open
}
