# kept only by 2.7.12
