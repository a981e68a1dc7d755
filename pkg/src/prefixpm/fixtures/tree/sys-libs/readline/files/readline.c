/* toy readline */
int readline_init(void) { return 0; }
