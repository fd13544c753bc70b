// Thin typed client over the review service endpoints. `fetchFn` is
// injectable so tests can run against a scripted service.

import type { DoneResponse, Progress, ReviewItem, VerdictAck, VerdictBody } from './types.js';

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
    constructor(public status: number, message: string) {
        super(message);
    }
}

export class ReviewApi {
    constructor(
        private baseUrl: string = '',
        private fetchFn: FetchLike = (input, init) => fetch(input, init),
    ) {}

    private async request<T>(path: string, init?: RequestInit): Promise<T> {
        const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
        if (!response.ok) {
            const body = await response.text();
            throw new ApiError(response.status, `${response.status}: ${body}`);
        }
        return (await response.json()) as T;
    }

    nextItem(inspector: string): Promise<ReviewItem | DoneResponse> {
        return this.request(`/api/review/next?inspector=${encodeURIComponent(inspector)}`);
    }

    submitVerdict(qaId: string, body: VerdictBody): Promise<VerdictAck> {
        return this.request(`/api/review/${encodeURIComponent(qaId)}/verdict`, {
            method: 'POST',
            headers: { 'Content-Type': 'application/json' },
            body: JSON.stringify(body),
        });
    }

    progress(): Promise<Progress> {
        return this.request('/api/progress');
    }
}
