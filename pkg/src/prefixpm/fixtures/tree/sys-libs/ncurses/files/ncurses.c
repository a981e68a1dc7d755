/* toy ncurses */
int ncurses_init(void) { return 0; }
