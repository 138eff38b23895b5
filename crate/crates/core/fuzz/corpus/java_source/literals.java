class L {
    String a = "/* not a comment */ // nor this";
    char c = '\'';
    String block = """
        text "block" with /* delimiters */
        """;
    /* multi
       line */ int f(int x) { return x >>> 2 & 0x1F | 1_000L; }
    @SuppressWarnings("unchecked") void g() { new int[] {1, 2}; }
}
