/* toy shell */
int main(void) { return 0; }
