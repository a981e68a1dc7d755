# new in 2.7.14
