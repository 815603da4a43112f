/* Freestanding hello world: no libc, raw Linux syscalls. */
static long sys_write(int fd, const char *buf, unsigned long len) {
#if defined(__x86_64__)
    long ret;
    __asm__ volatile("syscall" : "=a"(ret) : "a"(1), "D"(fd), "S"(buf), "d"(len) : "rcx", "r11", "memory");
    return ret;
#else
    long ret;
    __asm__ volatile("int $0x80" : "=a"(ret) : "a"(4), "b"(fd), "c"(buf), "d"(len) : "memory");
    return ret;
#endif
}

static void sys_exit(int code) {
#if defined(__x86_64__)
    __asm__ volatile("syscall" : : "a"(60), "D"(code));
#else
    __asm__ volatile("int $0x80" : : "a"(1), "b"(code));
#endif
    for (;;) {}
}

static unsigned long str_len(const char *s) {
    unsigned long n = 0;
    while (s[n]) n++;
    return n;
}

static const char greeting[] = "hello, world\n";
int counter;

void _start(void) {
    for (int i = 0; i < 3; i++) {
        sys_write(1, greeting, str_len(greeting));
        counter += i;
    }
    sys_exit(counter - 3);
}
