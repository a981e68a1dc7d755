/* toy quantreg */
int quantreg_init(void) { return 0; }
