class U { void f() { /* unterminated
