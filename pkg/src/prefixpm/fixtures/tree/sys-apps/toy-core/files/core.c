/* toy coreutils */
int main(void) { return 0; }
