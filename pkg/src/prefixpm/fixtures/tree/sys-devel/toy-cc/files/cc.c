/* toy compiler driver */
int main(void) { return 0; }
