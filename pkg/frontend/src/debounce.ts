/**
 * Trailing-edge debounce: the wrapped function runs once, `delayMs` after
 * the last call. Keeps slider drags at a bounded request rate.
 */
export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  delayMs: number,
): ((...args: A) => void) & { cancel(): void; flush(): void } {
  let timer: ReturnType<typeof setTimeout> | null = null;
  let pending: A | null = null;

  const debounced = ((...args: A) => {
    pending = args;
    if (timer !== null) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = null;
      const a = pending as A;
      pending = null;
      fn(...a);
    }, delayMs);
  }) as ((...args: A) => void) & { cancel(): void; flush(): void };

  debounced.cancel = () => {
    if (timer !== null) clearTimeout(timer);
    timer = null;
    pending = null;
  };

  debounced.flush = () => {
    if (timer !== null && pending !== null) {
      clearTimeout(timer);
      const a = pending;
      timer = null;
      pending = null;
      fn(...a);
    }
  };

  return debounced;
}

/**
 * Monotone nonce register for discarding stale async responses: take() a
 * ticket before the request, accept the response only if still current.
 */
export class NonceGate {
  private counter = 0;

  take(): number {
    return ++this.counter;
  }

  isCurrent(ticket: number): boolean {
    return ticket === this.counter;
  }
}
